#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mpw/library.hpp"
#include "mpw/path.hpp"

namespace mpw {

struct CheckReport {
  std::vector<std::pair<std::string, bool>> checks;

  void add(std::string name, bool ok) { checks.emplace_back(std::move(name), ok); }
  bool passed() const;
  /// "PASS name" / "FAIL name" lines.
  std::string to_text() const;
};

using StripeFn = StripePlan (*)(std::size_t, std::size_t);

/// Offline checks of the pure pieces: striping, pacing arithmetic, handshake
/// and frame encodings. The stripe implementation is injectable so a broken
/// rule can be shown to fail.
CheckReport run_unit_tests(StripeFn stripe_impl = &stripe);

/// Functional checks with both endpoints in this process over loopback.
CheckReport run_concurrent_tests();

/// Both ends of one loopback path inside `lib`: {server side, client side}.
std::pair<PathId, PathId> connect_loopback_pair(Library& lib, std::size_t streams, PathConfig config = [] {
  PathConfig c;
  c.autotune = false;
  return c;
}());

}  // namespace mpw
