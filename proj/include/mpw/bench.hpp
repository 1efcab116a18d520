#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "mpw/bytes.hpp"
#include "mpw/library.hpp"

namespace mpw {

inline constexpr int kDefaultRepetitions = 20;

struct BenchOptions {
  std::vector<std::size_t> sizes{1 * MiB, 64 * MiB};
  int repetitions = kDefaultRepetitions;
  /// Regenerate and checksum every payload on the receiving side.
  bool verify = true;
};

struct BenchResult {
  std::string direction;  // "c2s" or "s2c"
  std::size_t message_size = 0;
  std::size_t stream_count = 0;
  int repetitions = 0;
  double mean_throughput = 0;  // bytes/s
  double min_throughput = 0;
  double max_throughput = 0;
  double mean_rtt = 0;  // seconds
};

/// "64M,1K,4096" -> bytes. K/M/G are binary multiples. Empty -> Error(usage).
std::vector<std::size_t> parse_sizes(std::string_view text);

/// Deterministic payload for (size, repetition, direction).
void fill_pattern(MutableByteView out, std::uint64_t seed);
/// Adler-style rolling checksum widened to 64 bits.
std::uint64_t rolling_checksum(ByteView data);

/// Client side: sends its options to the server, then runs every size.
std::vector<BenchResult> run_benchmark_client(Library& lib, PathId path, const BenchOptions& options);
/// Server side: learns sizes and repetitions from the client.
std::vector<BenchResult> run_benchmark_server(Library& lib, PathId path);

std::string tsv_header();
std::string format_tsv(const std::vector<BenchResult>& results);
/// Inverse of format_tsv; `#` lines are skipped. Throws Error(protocol).
std::vector<BenchResult> parse_tsv(std::string_view text);

}  // namespace mpw
