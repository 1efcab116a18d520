#include "mpw/autotune.hpp"

#include <algorithm>
#include <sstream>
#include <vector>

#include "mpw/error.hpp"

namespace mpw {

std::string ProbeReport::to_text() const {
  std::ostringstream out;
  out << "rtt=" << rtt.count() << '\n';
  for (auto [chunk, rate] : throughput) out << "throughput." << chunk << '=' << rate << '\n';
  out << "chosen.stream_count=" << chosen.stream_count << '\n';
  out << "chosen.chunk_size=" << chosen.chunk_size << '\n';
  out << "chosen.pacing_rate=" << (chosen.pacing_rate ? std::to_string(*chosen.pacing_rate) : "off") << '\n';
  out << "chosen.window=" << (chosen.window ? std::to_string(*chosen.window) : "default") << '\n';
  return out.str();
}

std::size_t pick_chunk_size(const std::map<std::size_t, double>& throughput) {
  if (throughput.empty()) throw Error(Errc::precondition, "no probe candidates");
  auto best = throughput.begin();
  for (auto it = throughput.begin(); it != throughput.end(); ++it)
    if (it->second > best->second) best = it;
  return best->first;
}

Seconds measure_rtt(Library& lib, PathId path, int samples) {
  if (samples < 1) throw Error(Errc::range, "samples must be >= 1");
  std::vector<Seconds> trips;
  trips.reserve(static_cast<std::size_t>(samples));
  try {
    for (int i = 0; i < samples; ++i) {
      auto start = Clock::now();
      lib.barrier(path);
      trips.push_back(Clock::now() - start);
    }
  } catch (const Error& e) {
    if (e.code() == Errc::no_such_path) throw;
    throw Error(Errc::probe_failed, std::string("rtt probe: ") + e.what());
  }
  std::sort(trips.begin(), trips.end());
  auto mid = trips.size() / 2;
  return trips.size() % 2 ? trips[mid] : (trips[mid - 1] + trips[mid]) / 2;
}

ProbeReport autotune_path(Library& lib, PathId path, std::size_t probe_bytes) {
  const PathConfig before = lib.config(path);
  if (!before.autotune) throw Error(Errc::precondition, "autotuning is disabled on this path");
  if (probe_bytes < kMinProbeBytes) throw Error(Errc::range, "probe size must be at least 1 MiB");

  ProbeReport report;
  MessageBuffer probe(probe_bytes, std::byte{0x5a});
  try {
    report.rtt = measure_rtt(lib, path, 3);
    lib.set_pacing_rate(path, std::nullopt);
    for (auto chunk : kProbeChunkSizes) {
      lib.set_chunk_size(path, chunk);
      lib.barrier(path);
      auto start = Clock::now();
      lib.send_recv(path, probe, probe_bytes);
      Seconds elapsed = Clock::now() - start;
      report.throughput[chunk] = static_cast<double>(probe_bytes) / std::max(elapsed.count(), 1e-9);
    }
    report.chosen = before;
    report.chosen.chunk_size = pick_chunk_size(report.throughput);
    report.chosen.pacing_rate.reset();
    lib.set_chunk_size(path, report.chosen.chunk_size);
  } catch (const Error& e) {
    if (lib.is_open(path)) {
      try {
        lib.set_chunk_size(path, before.chunk_size);
        lib.set_pacing_rate(path, before.pacing_rate);
      } catch (const Error&) {
      }
    }
    if (e.code() == Errc::no_such_path) throw;
    throw Error(Errc::probe_failed, std::string("autotune: ") + e.what());
  }
  return report;
}

}  // namespace mpw
