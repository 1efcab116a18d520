#include "mpw/bench.hpp"

#include <algorithm>
#include <charconv>
#include <numeric>
#include <sstream>

#include "mpw/error.hpp"

namespace mpw {

namespace {

struct Sample {
  double throughput;
  double rtt;
};

std::uint64_t seed_for(std::size_t size, int rep, bool client_to_server) {
  return (static_cast<std::uint64_t>(size) * 0x9E3779B97F4A7C15ULL) ^ (static_cast<std::uint64_t>(rep) << 1) ^
         (client_to_server ? 1u : 0u);
}

BenchResult summarize(const char* direction, std::size_t size, std::size_t streams, const std::vector<Sample>& s) {
  BenchResult r;
  r.direction = direction;
  r.message_size = size;
  r.stream_count = streams;
  r.repetitions = static_cast<int>(s.size());
  r.min_throughput = s.front().throughput;
  r.max_throughput = s.front().throughput;
  double total = 0, rtt = 0;
  for (const auto& x : s) {
    total += x.throughput;
    rtt += x.rtt;
    r.min_throughput = std::min(r.min_throughput, x.throughput);
    r.max_throughput = std::max(r.max_throughput, x.throughput);
  }
  r.mean_throughput = total / static_cast<double>(s.size());
  r.mean_rtt = rtt / static_cast<double>(s.size());
  return r;
}

MessageBuffer encode_options(const BenchOptions& o) {
  MessageBuffer wire(8 + 8 + 8 * o.sizes.size());
  store_be<std::uint32_t>(wire.data(), static_cast<std::uint32_t>(o.repetitions));
  store_be<std::uint32_t>(wire.data() + 4, o.verify ? 1u : 0u);
  store_be<std::uint64_t>(wire.data() + 8, o.sizes.size());
  for (std::size_t i = 0; i < o.sizes.size(); ++i) store_be<std::uint64_t>(wire.data() + 16 + 8 * i, o.sizes[i]);
  return wire;
}

BenchOptions decode_options(const MessageBuffer& wire) {
  if (wire.size() < 16) throw Error(Errc::protocol, "short benchmark options");
  BenchOptions o;
  o.repetitions = static_cast<int>(load_be<std::uint32_t>(wire.data()));
  o.verify = load_be<std::uint32_t>(wire.data() + 4) != 0;
  auto n = load_be<std::uint64_t>(wire.data() + 8);
  if (wire.size() != 16 + 8 * n) throw Error(Errc::protocol, "bad benchmark options length");
  o.sizes.clear();
  for (std::uint64_t i = 0; i < n; ++i) o.sizes.push_back(load_be<std::uint64_t>(wire.data() + 16 + 8 * i));
  return o;
}

void check_payload(const MessageBuffer& got, std::uint64_t seed) {
  MessageBuffer expected(got.size());
  fill_pattern(expected, seed);
  if (rolling_checksum(got) != rolling_checksum(expected))
    throw Error(Errc::transfer_failed, "benchmark payload checksum mismatch");
}

/// One size, all repetitions, both directions. Both ends run the same sequence.
std::vector<BenchResult> run_size(Library& lib, PathId path, bool is_client, std::size_t size,
                                  const BenchOptions& o) {
  const auto streams = lib.config(path).stream_count;
  std::vector<Sample> c2s, s2c;
  MessageBuffer payload(size);
  for (int rep = 0; rep < o.repetitions; ++rep) {
    auto t0 = Clock::now();
    lib.barrier(path);
    double rtt = Seconds(Clock::now() - t0).count();

    for (bool client_sends : {true, false}) {
      const bool sending = client_sends == is_client;
      const auto seed = seed_for(size, rep, client_sends);
      if (sending && o.verify) fill_pattern(payload, seed);
      lib.barrier(path);
      auto start = Clock::now();
      if (sending) {
        lib.send(path, payload);
      } else {
        auto got = lib.recv(path, size);
        if (o.verify) check_payload(got, seed);
      }
      lib.barrier(path);
      double elapsed = std::max(Seconds(Clock::now() - start).count(), 1e-9);
      (client_sends ? c2s : s2c).push_back({static_cast<double>(size) / elapsed, rtt});
    }
  }
  return {summarize("c2s", size, streams, c2s), summarize("s2c", size, streams, s2c)};
}

}  // namespace

std::vector<std::size_t> parse_sizes(std::string_view text) {
  std::vector<std::size_t> sizes;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find(',', start);
    if (end == std::string_view::npos) end = text.size();
    auto item = text.substr(start, end - start);
    start = end + 1;
    if (item.empty()) throw Error(Errc::usage, "empty entry in size list");
    std::size_t multiplier = 1;
    switch (item.back()) {
      case 'k': case 'K': multiplier = KiB; break;
      case 'm': case 'M': multiplier = MiB; break;
      case 'g': case 'G': multiplier = GiB; break;
      default: break;
    }
    if (multiplier != 1) item.remove_suffix(1);
    std::size_t value = 0;
    auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), value);
    if (ec != std::errc{} || ptr != item.data() + item.size())
      throw Error(Errc::usage, "bad size '" + std::string(item) + "'");
    sizes.push_back(value * multiplier);
  }
  if (sizes.empty()) throw Error(Errc::usage, "no message sizes given");
  return sizes;
}

void fill_pattern(MutableByteView out, std::uint64_t seed) {
  std::uint64_t x = seed ^ 0x2545F4914F6CDD1DULL;
  if (x == 0) x = 1;
  std::size_t i = 0;
  while (i < out.size()) {
    x ^= x << 13;
    x ^= x >> 7;
    x ^= x << 17;
    for (int b = 0; b < 8 && i < out.size(); ++b, ++i) out[i] = static_cast<std::byte>(x >> (8 * b));
  }
}

std::uint64_t rolling_checksum(ByteView data) {
  constexpr std::uint64_t kMod = 4294967291ULL;  // largest prime below 2^32
  constexpr std::size_t kBlock = 1 << 16;  // keeps b well inside 64 bits between reductions
  std::uint64_t a = 1, b = 0;
  for (std::size_t pos = 0; pos < data.size(); pos += kBlock) {
    auto end = std::min(data.size(), pos + kBlock);
    for (std::size_t i = pos; i < end; ++i) {
      a += std::to_integer<std::uint64_t>(data[i]);
      b += a;
    }
    a %= kMod;
    b %= kMod;
  }
  return (b << 32) | a;
}

std::vector<BenchResult> run_benchmark_client(Library& lib, PathId path, const BenchOptions& options) {
  if (options.sizes.empty()) throw Error(Errc::usage, "no message sizes given");
  if (options.repetitions < 1) throw Error(Errc::usage, "repetitions must be >= 1");
  lib.dsend_recv(path, encode_options(options));
  std::vector<BenchResult> results;
  for (auto size : options.sizes) {
    auto r = run_size(lib, path, true, size, options);
    results.insert(results.end(), r.begin(), r.end());
  }
  return results;
}

std::vector<BenchResult> run_benchmark_server(Library& lib, PathId path) {
  auto options = decode_options(lib.dsend_recv(path, {}));
  std::vector<BenchResult> results;
  for (auto size : options.sizes) {
    auto r = run_size(lib, path, false, size, options);
    results.insert(results.end(), r.begin(), r.end());
  }
  return results;
}

std::string tsv_header() {
  return "# direction\tmessage_bytes\tstreams\treps\tmean_Bps\tmin_Bps\tmax_Bps\tmean_rtt_s\n";
}

std::string format_tsv(const std::vector<BenchResult>& results) {
  std::ostringstream out;
  out << tsv_header();
  out.precision(12);
  for (const auto& r : results)
    out << r.direction << '\t' << r.message_size << '\t' << r.stream_count << '\t' << r.repetitions << '\t'
        << r.mean_throughput << '\t' << r.min_throughput << '\t' << r.max_throughput << '\t' << r.mean_rtt
        << '\n';
  return out.str();
}

std::vector<BenchResult> parse_tsv(std::string_view text) {
  std::vector<BenchResult> results;
  std::istringstream in{std::string(text)};
  for (std::string line; std::getline(in, line);) {
    if (line.empty() || line.front() == '#') continue;
    std::istringstream fields(line);
    BenchResult r;
    if (!(fields >> r.direction >> r.message_size >> r.stream_count >> r.repetitions >> r.mean_throughput >>
          r.min_throughput >> r.max_throughput >> r.mean_rtt))
      throw Error(Errc::protocol, "malformed benchmark line: " + line);
    results.push_back(r);
  }
  return results;
}

}  // namespace mpw
