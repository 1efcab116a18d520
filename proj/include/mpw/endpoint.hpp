#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace mpw {

struct Endpoint {
  std::string host;
  std::uint16_t port = 0;

  /// Parses "host:port". Throws Error(usage) on malformed input or a port
  /// outside 1..65535.
  static Endpoint parse(std::string_view text);

  std::string to_string() const;

  friend bool operator==(const Endpoint&, const Endpoint&) = default;
};

/// Throws Error(precondition) unless host is non-empty. Port 0 is accepted
/// only when `allow_ephemeral` (bind side).
void validate(const Endpoint& ep, bool allow_ephemeral = false);

}  // namespace mpw
