#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mpw {

enum class Errc {
  unresolvable_host,
  connect_failed,
  timeout,
  protocol,
  transport,
  truncated,
  closed,
  no_such_path,
  no_such_handle,
  precondition,
  range,
  busy,
  oversize,
  barrier,
  transfer_failed,
  probe_failed,
  not_initialized,
  io,
  usage,
};

const char* to_string(Errc code) noexcept;

/// Library error. `bytes()` reports how far a transfer got when the failure
/// interrupted one (bytes sent for send errors, bytes received for truncation).
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what, std::size_t bytes = 0)
      : std::runtime_error(what), code_(code), bytes_(bytes) {}

  Errc code() const noexcept { return code_; }
  std::size_t bytes() const noexcept { return bytes_; }

 private:
  Errc code_;
  std::size_t bytes_;
};

}  // namespace mpw
