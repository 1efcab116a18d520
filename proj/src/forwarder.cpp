#include "mpw/forwarder.hpp"

#include <poll.h>

#include <fstream>
#include <sstream>
#include <thread>

#include "mpw/error.hpp"

namespace mpw {

void validate(const ForwardRule& rule) {
  validate(rule.listen, /*allow_ephemeral=*/true);
  validate(rule.target);
  if (rule.listen == rule.target) throw Error(Errc::precondition, "listen and target endpoints are identical");
  if (rule.stream_count < 1 || rule.stream_count > kMaxStreams)
    throw Error(Errc::precondition, "stream count must be in [1, 256]");
}

std::vector<ForwardRule> parse_forward_rules(std::istream& in) {
  std::vector<ForwardRule> rules;
  std::string line;
  for (int number = 1; std::getline(in, line); ++number) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    std::string listen, target, extra;
    long long streams = 0;
    if (!(fields >> listen)) continue;
    try {
      if (!(fields >> target >> streams) || (fields >> extra))
        throw Error(Errc::usage, "expected 'listen_host:port target_host:port streams'");
      ForwardRule rule{Endpoint::parse(listen), Endpoint::parse(target), 0};
      if (streams < 1 || streams > static_cast<long long>(kMaxStreams))
        throw Error(Errc::usage, "stream count must be in [1, 256]");
      rule.stream_count = static_cast<std::size_t>(streams);
      validate(rule);
      rules.push_back(rule);
    } catch (const Error& e) {
      throw Error(Errc::usage, "line " + std::to_string(number) + ": " + e.what());
    }
  }
  return rules;
}

std::vector<ForwardRule> load_forward_rules(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(Errc::usage, "cannot open " + file.string());
  return parse_forward_rules(in);
}

Forwarder::Forwarder(std::vector<ForwardRule> rules, ForwarderOptions options)
    : rules_(std::move(rules)), options_(std::move(options)) {
  for (const auto& rule : rules_) {
    validate(rule);
    listeners_.push_back(Listener::bind(rule.listen));
  }
}

std::vector<std::uint16_t> Forwarder::ports() const {
  std::vector<std::uint16_t> ports;
  for (const auto& l : listeners_) ports.push_back(l.port());
  return ports;
}

void Forwarder::log(const std::string& message) const {
  if (options_.log) options_.log(message);
}

void Forwarder::serve(std::size_t rule_index, std::stop_token stop) {
  const auto& rule = rules_[rule_index];
  auto& listener = listeners_[rule_index];
  PathConfig config;
  config.autotune = false;
  const std::string tag = rule.listen.to_string() + " -> " + rule.target.to_string();

  while (!stop.stop_requested()) {
    pollfd pfd{listener.fd(), POLLIN, 0};
    if (::poll(&pfd, 1, 100) <= 0) continue;

    PathId incoming = 0;
    try {
      incoming = library_.accept_path(listener, rule.stream_count, config, Seconds(30));
    } catch (const Error& e) {
      log(tag + ": accept failed: " + e.what());
      continue;
    }
    PathId outgoing = 0;
    try {
      outgoing = library_.create_path(rule.target, rule.stream_count, Role::client, config,
                                      options_.connect_timeout);
    } catch (const Error& e) {
      log(tag + ": target unreachable: " + e.what());
      library_.destroy_path(incoming);
      continue;
    }

    log(tag + ": session started");
    std::stop_callback on_stop(stop, [&] {
      for (auto id : {incoming, outgoing}) {
        try {
          library_.destroy_path(id);
        } catch (const Error&) {
        }
      }
    });
    try {
      library_.relay(incoming, outgoing);
      log(tag + ": session closed");
    } catch (const Error& e) {
      log(tag + ": session failed: " + e.what());
    }
    ++sessions_;
  }
}

void Forwarder::run(std::stop_token stop) {
  std::vector<std::jthread> workers;
  for (std::size_t i = 0; i < rules_.size(); ++i)
    workers.emplace_back([this, i, stop] { serve(i, stop); });
}

void run_forwarder(const std::vector<ForwardRule>& rules, std::stop_token stop, ForwarderOptions options) {
  Forwarder forwarder(rules, std::move(options));
  forwarder.run(stop);
}

}  // namespace mpw
