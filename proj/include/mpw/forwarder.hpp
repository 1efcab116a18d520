#pragma once

#include <atomic>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <stop_token>
#include <string_view>
#include <vector>

#include "mpw/endpoint.hpp"
#include "mpw/library.hpp"
#include "mpw/stream.hpp"

namespace mpw {

struct ForwardRule {
  Endpoint listen;
  Endpoint target;
  std::size_t stream_count = 1;

  friend bool operator==(const ForwardRule&, const ForwardRule&) = default;
};

void validate(const ForwardRule& rule);

/// One rule per line: `listen_host:port target_host:port streams`. Blank lines
/// and `#` comments are ignored. Throws Error(usage) naming the bad line.
std::vector<ForwardRule> parse_forward_rules(std::istream& in);
std::vector<ForwardRule> load_forward_rules(const std::filesystem::path& file);

struct ForwarderOptions {
  Seconds connect_timeout{5.0};
  std::function<void(std::string_view)> log;
};

/// Accepts paths on every rule's listen endpoint and relays each to the
/// rule's target, one session per rule at a time.
class Forwarder {
 public:
  /// Binds every listen endpoint up front; port 0 binds an ephemeral port.
  explicit Forwarder(std::vector<ForwardRule> rules, ForwarderOptions options = {});

  std::vector<std::uint16_t> ports() const;
  std::size_t sessions_completed() const noexcept { return sessions_; }

  /// Blocks until `stop` is requested.
  void run(std::stop_token stop);

 private:
  void serve(std::size_t rule_index, std::stop_token stop);
  void log(const std::string& message) const;

  std::vector<ForwardRule> rules_;
  std::vector<Listener> listeners_;
  ForwarderOptions options_;
  Library library_;
  std::atomic<std::size_t> sessions_{0};
};

void run_forwarder(const std::vector<ForwardRule>& rules, std::stop_token stop, ForwarderOptions options = {});

}  // namespace mpw
