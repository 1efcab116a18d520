#include <iostream>

#include "CLI11.hpp"
#include "mpw/bench.hpp"
#include "mpw/error.hpp"
#include "mpw/filetools.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Copy a file to or from a remote host over a multi-stream path"};
  mpw::MpwcpOptions options;
  std::string chunk = std::to_string(options.chunk_size);
  std::string source, dest, peer_send, peer_recv;
  double timeout = options.timeout.count();
  app.add_option("-n,--streams", options.streams, "number of TCP streams")->check(CLI::Range(1, 256));
  app.add_option("-c,--chunk", chunk, "bytes per low-level send (K/M/G suffixes)");
  app.add_option("--rsh", options.rsh, "remote shell command");
  app.add_option("--remote-program", options.remote_program, "mpw-cp executable on the remote host");
  app.add_option("--timeout", timeout, "seconds to wait for the peer");
  auto* send_opt = app.add_option("--peer-send", peer_send, "(internal) serve FILE to the initiating side");
  auto* recv_opt = app.add_option("--peer-recv", peer_recv, "(internal) receive into FILE from the initiating side");
  send_opt->excludes(recv_opt);
  app.add_option("SRC", source, "source: local path or host:path");
  app.add_option("DST", dest, "destination: local path or host:path");
  CLI11_PARSE(app, argc, argv);

  try {
    options.chunk_size = mpw::parse_sizes(chunk).front();
    options.timeout = mpw::Seconds(timeout);
    if (!peer_send.empty() || !peer_recv.empty()) {
      auto mode = peer_send.empty() ? mpw::PeerMode::receive : mpw::PeerMode::send;
      mpw::mpwcp_peer(mode, peer_send.empty() ? peer_recv : peer_send, options,
                      [](std::string_view line) { std::cout << line << std::endl; });
      return 0;
    }
    if (source.empty() || dest.empty()) throw mpw::Error(mpw::Errc::usage, "need SRC and DST");
    mpw::mpwcp(mpw::FileSpec::parse(source), mpw::FileSpec::parse(dest), options);
  } catch (const mpw::Error& e) {
    std::cerr << "mpw-cp: " << e.what() << '\n';
    return e.code() == mpw::Errc::usage ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "mpw-cp: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
