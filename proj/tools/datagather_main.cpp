#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "mpw/error.hpp"
#include "mpw/filetools.hpp"
#include "signal_wait.hpp"

namespace {

void log_line(std::string_view m) { std::cerr << "datagather: " << m << std::endl; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Keep a remote directory in one-way sync with a local one"};
  std::string source, dest, connect;
  int listen_port = -1;
  double interval = 1.0;
  std::size_t streams = 1;
  auto* src_opt = app.add_option("--source", source, "directory to publish");
  auto* dst_opt = app.add_option("--dest", dest, "directory to write received files into");
  auto* conn_opt = app.add_option("--connect", connect, "peer host:port");
  auto* listen_opt = app.add_option("--listen", listen_port, "port to accept the peer on")->check(CLI::Range(0, 65535));
  app.add_option("--interval", interval, "seconds between scans (source side)");
  app.add_option("-n,--streams", streams, "TCP streams when connecting")->check(CLI::Range(1, 256));
  src_opt->excludes(dst_opt);
  conn_opt->excludes(listen_opt);
  CLI11_PARSE(app, argc, argv);

  if (source.empty() == dest.empty() || connect.empty() == (listen_port < 0)) {
    std::cerr << "datagather: need exactly one of --source/--dest and one of --connect/--listen\n";
    return 2;
  }

  std::stop_source stop;
  auto watcher = mpw::tools::stop_on_signal(stop);
  mpw::Library lib;
  mpw::PathConfig config;
  config.autotune = false;

  try {
    std::optional<mpw::Listener> listener;
    if (listen_port >= 0) {
      listener.emplace(mpw::Listener::bind({"0.0.0.0", static_cast<std::uint16_t>(listen_port)}));
      std::cout << "LISTENING " << listener->port() << std::endl;
    }
    auto open_path = [&]() -> mpw::PathId {
      if (listener) return lib.accept_path_any(*listener, config, mpw::Seconds(3600));
      return lib.create_path(mpw::Endpoint::parse(connect), streams, mpw::Role::client, config);
    };

    if (!dest.empty()) {
      std::filesystem::create_directories(dest);
      while (!stop.stop_requested()) {
        auto path = open_path();
        mpw::GatherSink sink(lib, path, dest, log_line);
        sink.run(stop.get_token());
        if (!listener) break;
      }
      return 0;
    }

    mpw::scan_manifest(source);
    while (!stop.stop_requested()) {
      mpw::PathId path = 0;
      try {
        path = open_path();
      } catch (const mpw::Error& e) {
        log_line(std::string("connect failed, retrying: ") + e.what());
        std::this_thread::sleep_for(std::chrono::duration<double>(interval));
        continue;
      }
      mpw::GatherSource gather(lib, path, source);
      while (!stop.stop_requested() && lib.is_open(path)) {
        try {
          auto cycle = gather.run_cycle();
          if (cycle.frames)
            log_line("sent " + std::to_string(cycle.frames) + " files, " + std::to_string(cycle.payload_bytes) +
                     " bytes");
        } catch (const mpw::Error& e) {
          log_line(std::string("cycle failed: ") + e.what());
          break;
        }
        std::this_thread::sleep_for(std::chrono::duration<double>(interval));
      }
      try {
        lib.destroy_path(path);
      } catch (const mpw::Error&) {
      }
    }
  } catch (const mpw::Error& e) {
    std::cerr << "datagather: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
