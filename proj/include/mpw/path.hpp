#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "mpw/bytes.hpp"
#include "mpw/stream.hpp"

namespace mpw {

using PathId = std::uint32_t;

struct PathConfig {
  std::size_t stream_count = 1;
  std::size_t chunk_size = kDefaultChunkSize;
  /// Per-stream ceiling in bytes/s; unset disables pacing.
  std::optional<std::uint64_t> pacing_rate;
  /// Requested socket buffer size; unset leaves the OS default.
  std::optional<std::size_t> window;
  bool autotune = true;
  /// Largest length a peer may advertise for a dynamic-size message.
  std::uint64_t max_dynamic_size = GiB;

  /// Throws Error(precondition) or Error(range).
  void validate() const;

  friend bool operator==(const PathConfig&, const PathConfig&) = default;
};

/// Segment lengths for one message, one entry per stream, in stream order.
struct StripePlan {
  std::vector<std::size_t> segment_lengths;

  std::size_t offset(std::size_t stream) const;
};

/// Even split: the first (total % streams) segments carry one extra byte.
StripePlan stripe(std::size_t total_len, std::size_t stream_count);

}  // namespace mpw
