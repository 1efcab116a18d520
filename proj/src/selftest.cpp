#include "mpw/selftest.hpp"

#include <algorithm>
#include <future>
#include <sstream>
#include <thread>

#include "mpw/bench.hpp"
#include "mpw/error.hpp"
#include "mpw/filetools.hpp"
#include "mpw/stream.hpp"

namespace mpw {

bool CheckReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.second; });
}

std::string CheckReport::to_text() const {
  std::ostringstream out;
  for (const auto& [name, ok] : checks) out << (ok ? "PASS " : "FAIL ") << name << '\n';
  return out.str();
}

std::pair<PathId, PathId> connect_loopback_pair(Library& lib, std::size_t streams, PathConfig config) {
  auto listener = Listener::bind({"127.0.0.1", 0});
  auto server = std::async(std::launch::async, [&] { return lib.accept_path(listener, streams, config); });
  PathId client = 0;
  try {
    client = lib.create_path({"127.0.0.1", listener.port()}, streams, Role::client, config);
  } catch (...) {
    try {
      server.get();
    } catch (...) {
    }
    throw;
  }
  return {server.get(), client};
}

namespace {

template <typename F>
bool expect_error(Errc code, F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code() == code;
  }
  return false;
}

MessageBuffer pattern(std::size_t n, std::uint64_t seed) {
  MessageBuffer b(n);
  fill_pattern(b, seed);
  return b;
}

template <typename F>
void check(CheckReport& report, const std::string& name, F&& f) {
  try {
    report.add(name, f());
  } catch (const std::exception&) {
    report.add(name, false);
  }
}

}  // namespace

CheckReport run_unit_tests(StripeFn stripe_impl) {
  CheckReport report;

  check(report, "stripe(10,4) == [3,3,2,2]", [&] {
    return stripe_impl(10, 4).segment_lengths == std::vector<std::size_t>{3, 3, 2, 2};
  });
  check(report, "stripe(7,1) == [7]", [&] { return stripe_impl(7, 1).segment_lengths == std::vector<std::size_t>{7}; });
  check(report, "stripe(5,8) == [1,1,1,1,1,0,0,0]", [&] {
    return stripe_impl(5, 8).segment_lengths == std::vector<std::size_t>{1, 1, 1, 1, 1, 0, 0, 0};
  });
  check(report, "stripe sums and balances for len<=200, streams<=64", [&] {
    for (std::size_t len = 0; len <= 200; ++len)
      for (std::size_t n = 1; n <= 64; ++n) {
        auto seg = stripe_impl(len, n).segment_lengths;
        if (seg.size() != n) return false;
        std::size_t sum = 0;
        for (auto s : seg) sum += s;
        auto [lo, hi] = std::minmax_element(seg.begin(), seg.end());
        if (sum != len || *hi - *lo > 1) return false;
      }
    return true;
  });

  check(report, "pacing_delay(0, r) == 0", [] { return pacing_delay(0, 12345).count() == 0.0; });
  check(report, "pacing_delay(1 MiB, 1 MiB/s) == 1 s", [] { return pacing_delay(MiB, MiB).count() == 1.0; });
  check(report, "pacing_delay(8 MiB, 16 MiB/s) == 0.5 s",
        [] { return pacing_delay(8 * MiB, 16 * MiB).count() == 0.5; });
  check(report, "pacing_delay is additive", [] {
    auto whole = pacing_delay(3 * MiB + 17, 777).count();
    auto parts = pacing_delay(3 * MiB, 777).count() + pacing_delay(17, 777).count();
    return std::abs(whole - parts) < 1e-9 * whole;
  });

  check(report, "handshake encodes big-endian fields", [] {
    StreamHandshake hs{0x01020304, 5, 6};
    auto w = hs.encode();
    const unsigned char expected[] = {'M', 'P', 'W', 'P', 1, 1, 2, 3, 4, 0, 5, 0, 6};
    return std::equal(w.begin(), w.end(), reinterpret_cast<const std::byte*>(expected));
  });
  check(report, "handshake decode inverts encode", [] {
    StreamHandshake hs{77, 255, 256};
    auto w = hs.encode();
    return StreamHandshake::decode(w) == hs;
  });
  check(report, "handshake with bad magic is rejected", [] {
    auto w = StreamHandshake{1, 0, 1}.encode();
    w[0] = std::byte{'X'};
    return expect_error(Errc::protocol, [&] { StreamHandshake::decode(w); });
  });
  check(report, "handshake with index >= count is rejected", [] {
    auto w = StreamHandshake{1, 0, 1}.encode();
    w[10] = std::byte{1};
    return expect_error(Errc::protocol, [&] { StreamHandshake::decode(w); });
  });

  check(report, "file frame header round trip", [] {
    FileFrameHeader h{"dir/file.bin", 0755, 123456789012ULL};
    std::size_t used = 0;
    auto wire = encode_frame_header(h);
    return decode_frame_header(wire, &used) == h && used == wire.size() && wire.size() == 14 + 12;
  });
  check(report, "file frame with ../ is refused",
        [] { return expect_error(Errc::protocol, [] { encode_frame_header({"../escape", 0644, 0}); }); });
  check(report, "endpoint parse", [] {
    auto ep = Endpoint::parse("example.org:8080");
    return ep.host == "example.org" && ep.port == 8080 &&
           expect_error(Errc::usage, [] { Endpoint::parse("nohost"); });
  });
  return report;
}

CheckReport run_concurrent_tests() {
  CheckReport report;
  Library lib;

  check(report, "send/recv over 4 streams", [&] {
    auto [a, b] = connect_loopback_pair(lib, 4);
    auto data = pattern(1 * MiB + 3, 1);
    auto got = std::async(std::launch::async, [&, a = a] { return lib.recv(a, data.size()); });
    lib.send(b, data);
    bool ok = got.get() == data;
    lib.destroy_path(a);
    lib.destroy_path(b);
    return ok;
  });

  check(report, "send_recv full duplex", [&] {
    auto [a, b] = connect_loopback_pair(lib, 3);
    auto x = pattern(64 * KiB, 2), y = pattern(32 * KiB + 1, 3);
    auto got_a = std::async(std::launch::async, [&, a = a] { return lib.send_recv(a, x, y.size()); });
    auto got_b = lib.send_recv(b, y, x.size());
    bool ok = got_a.get() == y && got_b == x;
    lib.destroy_path(a);
    lib.destroy_path(b);
    return ok;
  });

  check(report, "dsend_recv with unknown sizes", [&] {
    auto [a, b] = connect_loopback_pair(lib, 2);
    auto x = pattern(5, 4), y = pattern(12, 5);
    auto got_a = std::async(std::launch::async, [&, a = a] { return lib.dsend_recv(a, x); });
    auto got_b = lib.dsend_recv(b, y);
    bool ok = got_a.get() == y && got_b == x;
    lib.destroy_path(a);
    lib.destroy_path(b);
    return ok;
  });

  check(report, "barrier", [&] {
    auto [a, b] = connect_loopback_pair(lib, 1);
    auto other = std::async(std::launch::async, [&, a = a] { lib.barrier(a); });
    lib.barrier(b);
    other.get();
    lib.destroy_path(a);
    lib.destroy_path(b);
    return true;
  });

  check(report, "cycle around a three-node ring", [&] {
    // Node k sends on ring[k].second and receives on ring[(k+2)%3].first.
    std::vector<std::pair<PathId, PathId>> ring;
    for (int i = 0; i < 3; ++i) ring.push_back(connect_loopback_pair(lib, 2));
    std::vector<MessageBuffer> tokens;
    for (int i = 0; i < 3; ++i) tokens.push_back(pattern(KiB, 10 + i));
    std::vector<std::future<MessageBuffer>> results;
    for (int k = 0; k < 3; ++k)
      results.push_back(std::async(std::launch::async, [&, k] {
        return lib.cycle(ring[(k + 2) % 3].first, ring[k].second, tokens[k], KiB);
      }));
    bool ok = true;
    for (int k = 0; k < 3; ++k) ok = ok && results[k].get() == tokens[(k + 2) % 3];
    for (auto [s, c] : ring) {
      lib.destroy_path(s);
      lib.destroy_path(c);
    }
    return ok;
  });

  check(report, "isend_recv then wait matches blocking exchange", [&] {
    auto [a, b] = connect_loopback_pair(lib, 2);
    auto x = pattern(256 * KiB, 6), y = pattern(100, 7);
    auto h = lib.isend_recv(b, y, x.size());
    auto got_a = lib.send_recv(a, x, y.size());
    auto got_b = lib.wait(h);
    bool ok = got_a == y && got_b == x;
    lib.destroy_path(a);
    lib.destroy_path(b);
    return ok;
  });

  check(report, "relay forwards between paths", [&] {
    auto [left_srv, left_cli] = connect_loopback_pair(lib, 2);
    auto [right_srv, right_cli] = connect_loopback_pair(lib, 2);
    auto relay = std::async(std::launch::async, [&, l = left_srv, r = right_cli] { lib.relay(l, r); });
    auto data = pattern(512 * KiB, 8);
    auto got = std::async(std::launch::async, [&, d = right_srv] { return lib.recv(d, data.size()); });
    lib.send(left_cli, data);
    bool ok = got.get() == data;
    lib.destroy_path(left_cli);
    relay.get();
    lib.destroy_path(right_srv);
    return ok;
  });

  check(report, "peer disappearing mid-transfer fails cleanly", [&] {
    auto [a, b] = connect_loopback_pair(lib, 2);
    auto got = std::async(std::launch::async, [&, a = a] { lib.recv(a, 4 * MiB); });
    lib.send(b, pattern(KiB, 9));
    lib.destroy_path(b);
    bool ok = expect_error(Errc::truncated, [&] { got.get(); });
    lib.destroy_path(a);
    return ok;
  });

  return report;
}

}  // namespace mpw
