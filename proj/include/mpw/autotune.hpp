#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <string>

#include "mpw/library.hpp"

namespace mpw {

inline constexpr std::array<std::size_t, 3> kProbeChunkSizes{256 * KiB, 1 * MiB, 8 * MiB};
inline constexpr std::size_t kMinProbeBytes = 1 * MiB;

struct ProbeReport {
  Seconds rtt{0};
  /// chunk size -> measured bytes/s in one direction.
  std::map<std::size_t, double> throughput;
  PathConfig chosen;

  /// key=value lines, one per field; candidates as `throughput.<chunk>=<B/s>`.
  std::string to_text() const;
};

/// Fastest candidate; equal throughput goes to the smaller chunk size.
std::size_t pick_chunk_size(const std::map<std::size_t, double>& throughput);

/// Median of `samples` barrier round trips on stream 0. Both ends must call it.
Seconds measure_rtt(Library& lib, PathId path, int samples);

/// Exchanges `probe_bytes` per candidate chunk size (pacing off) and applies
/// the winner. Both ends must call it with the same probe size.
ProbeReport autotune_path(Library& lib, PathId path, std::size_t probe_bytes = kMinProbeBytes);

}  // namespace mpw
