#include <iostream>

#include "CLI11.hpp"
#include "mpw/error.hpp"
#include "mpw/forwarder.hpp"
#include "signal_wait.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Relay incoming multi-stream paths to their configured targets"};
  std::string config_file;
  bool verbose = false;
  app.add_option("config", config_file, "rule file: 'listen_host:port target_host:port streams' per line")
      ->required();
  app.add_flag("-v,--verbose", verbose, "log session events to stderr");
  CLI11_PARSE(app, argc, argv);

  std::vector<mpw::ForwardRule> rules;
  try {
    rules = mpw::load_forward_rules(config_file);
    if (rules.empty()) throw mpw::Error(mpw::Errc::usage, "no rules in " + config_file);
  } catch (const mpw::Error& e) {
    std::cerr << "forwarder: " << e.what() << '\n';
    return 2;
  }

  std::stop_source stop;
  auto watcher = mpw::tools::stop_on_signal(stop);
  mpw::ForwarderOptions options;
  if (verbose) options.log = [](std::string_view m) { std::cerr << "forwarder: " << m << std::endl; };
  try {
    mpw::Forwarder forwarder(rules, options);
    if (verbose)
      for (std::size_t i = 0; i < rules.size(); ++i)
        std::cerr << "forwarder: listening on port " << forwarder.ports()[i] << " -> " << rules[i].target.to_string()
                  << " (" << rules[i].stream_count << " streams)" << std::endl;
    forwarder.run(stop.get_token());
  } catch (const mpw::Error& e) {
    std::cerr << "forwarder: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
