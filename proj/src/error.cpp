#include "mpw/error.hpp"

namespace mpw {

const char* to_string(Errc code) noexcept {
  switch (code) {
    case Errc::unresolvable_host: return "unresolvable host";
    case Errc::connect_failed: return "connect failed";
    case Errc::timeout: return "timeout";
    case Errc::protocol: return "protocol error";
    case Errc::transport: return "transport error";
    case Errc::truncated: return "truncated stream";
    case Errc::closed: return "stream closed";
    case Errc::no_such_path: return "no such path";
    case Errc::no_such_handle: return "no such handle";
    case Errc::precondition: return "precondition violated";
    case Errc::range: return "value out of range";
    case Errc::busy: return "path busy";
    case Errc::oversize: return "oversize frame";
    case Errc::barrier: return "barrier failed";
    case Errc::transfer_failed: return "transfer failed";
    case Errc::probe_failed: return "probe failed";
    case Errc::not_initialized: return "library not initialized";
    case Errc::io: return "i/o error";
    case Errc::usage: return "usage error";
  }
  return "unknown error";
}

}  // namespace mpw
