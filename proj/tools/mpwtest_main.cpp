#include <iostream>

#include "CLI11.hpp"
#include "mpw/bench.hpp"
#include "mpw/error.hpp"
#include "mpw/library.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Two-endpoint throughput and latency benchmark"};
  app.require_subcommand(1);
  std::string sizes = "1M,64M", peer;
  std::size_t streams = 1;
  int reps = mpw::kDefaultRepetitions;
  int port = 0;
  bool no_verify = false, quiet_header = false;

  auto* server = app.add_subcommand("server", "wait for a client on PORT");
  server->add_option("port", port, "listen port")->required()->check(CLI::Range(0, 65535));
  auto* client = app.add_subcommand("client", "connect to a server at HOST:PORT");
  client->add_option("peer", peer, "server host:port")->required();
  client->add_option("--sizes", sizes, "comma-separated message sizes (K/M/G suffixes)");
  client->add_option("--streams", streams, "TCP streams in the path")->check(CLI::Range(1, 256));
  client->add_option("--reps", reps, "repetitions per size and direction")->check(CLI::PositiveNumber);
  client->add_flag("--no-verify", no_verify, "skip payload checksums");
  app.add_flag("--no-header", quiet_header, "omit the # header line");
  CLI11_PARSE(app, argc, argv);

  mpw::Library lib;
  mpw::PathConfig config;
  config.autotune = false;
  try {
    std::vector<mpw::BenchResult> results;
    if (*server) {
      auto listener = mpw::Listener::bind({"0.0.0.0", static_cast<std::uint16_t>(port)});
      std::cerr << "mpwtest: listening on port " << listener.port() << std::endl;
      auto path = lib.accept_path_any(listener, config, mpw::Seconds(3600));
      results = mpw::run_benchmark_server(lib, path);
    } else {
      mpw::BenchOptions options;
      options.sizes = mpw::parse_sizes(sizes);
      options.repetitions = reps;
      options.verify = !no_verify;
      auto path = lib.create_path(mpw::Endpoint::parse(peer), streams, mpw::Role::client, config);
      results = mpw::run_benchmark_client(lib, path, options);
    }
    auto text = mpw::format_tsv(results);
    if (quiet_header) text.erase(0, mpw::tsv_header().size());
    std::cout << text;
  } catch (const mpw::Error& e) {
    std::cerr << "mpwtest: " << e.what() << '\n';
    return e.code() == mpw::Errc::usage ? 2 : 1;
  }
  return 0;
}
