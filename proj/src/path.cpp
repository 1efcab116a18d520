#include "mpw/path.hpp"

#include <numeric>

#include "mpw/error.hpp"

namespace mpw {

void PathConfig::validate() const {
  if (stream_count < 1 || stream_count > kMaxStreams)
    throw Error(Errc::precondition, "stream count must be in [1, 256], got " + std::to_string(stream_count));
  if (chunk_size < 1) throw Error(Errc::range, "chunk size must be >= 1");
  if (pacing_rate && *pacing_rate == 0) throw Error(Errc::range, "pacing rate must be > 0");
  if (window && *window == 0) throw Error(Errc::range, "window must be > 0");
}

std::size_t StripePlan::offset(std::size_t stream) const {
  return std::accumulate(segment_lengths.begin(), segment_lengths.begin() + static_cast<std::ptrdiff_t>(stream),
                         std::size_t{0});
}

StripePlan stripe(std::size_t total_len, std::size_t stream_count) {
  if (stream_count < 1) throw Error(Errc::precondition, "stripe needs at least one stream");
  StripePlan plan;
  plan.segment_lengths.assign(stream_count, total_len / stream_count);
  for (std::size_t i = 0; i < total_len % stream_count; ++i) ++plan.segment_lengths[i];
  return plan;
}

}  // namespace mpw
