#include "mpw/endpoint.hpp"

#include <charconv>

#include "mpw/error.hpp"

namespace mpw {

Endpoint Endpoint::parse(std::string_view text) {
  auto colon = text.rfind(':');
  if (colon == std::string_view::npos || colon == 0 || colon + 1 == text.size())
    throw Error(Errc::usage, "expected host:port, got '" + std::string(text) + "'");
  auto port_text = text.substr(colon + 1);
  unsigned port = 0;
  auto [ptr, ec] = std::from_chars(port_text.data(), port_text.data() + port_text.size(), port);
  if (ec != std::errc{} || ptr != port_text.data() + port_text.size() || port == 0 || port > 65535)
    throw Error(Errc::usage, "bad port in '" + std::string(text) + "'");
  return {std::string(text.substr(0, colon)), static_cast<std::uint16_t>(port)};
}

std::string Endpoint::to_string() const { return host + ":" + std::to_string(port); }

void validate(const Endpoint& ep, bool allow_ephemeral) {
  if (ep.host.empty()) throw Error(Errc::precondition, "endpoint host is empty");
  if (ep.port == 0 && !allow_ephemeral) throw Error(Errc::precondition, "endpoint port is 0");
}

}  // namespace mpw
