#include <algorithm>
#include <future>
#include <random>
#include <thread>

#include <gtest/gtest.h>

#include "mpw/error.hpp"
#include "mpw/library.hpp"
#include "mpw/selftest.hpp"
#include "test_support.hpp"

using namespace mpw;
using namespace std::chrono_literals;
using test_support::random_buffer;
using test_support::sha256;

namespace {

PathConfig manual() {
  PathConfig c;
  c.autotune = false;
  return c;
}

template <typename F>
Errc error_code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an mpw::Error";
  return Errc::usage;
}

class PathTest : public ::testing::Test {
 protected:
  std::pair<PathId, PathId> pair(std::size_t streams, PathConfig config = manual()) {
    return connect_loopback_pair(lib, streams, config);
  }
  Library lib;
};

}  // namespace

TEST(Stripe, Examples) {
  EXPECT_EQ(stripe(10, 4).segment_lengths, (std::vector<std::size_t>{3, 3, 2, 2}));
  EXPECT_EQ(stripe(7, 1).segment_lengths, (std::vector<std::size_t>{7}));
  EXPECT_EQ(stripe(5, 8).segment_lengths, (std::vector<std::size_t>{1, 1, 1, 1, 1, 0, 0, 0}));
  EXPECT_EQ(stripe(0, 3).segment_lengths, (std::vector<std::size_t>{0, 0, 0}));
  EXPECT_THROW(stripe(4, 0), Error);
}

TEST(Stripe, OffsetsAreContiguous) {
  auto plan = stripe(10, 4);
  EXPECT_EQ(plan.offset(0), 0u);
  EXPECT_EQ(plan.offset(1), 3u);
  EXPECT_EQ(plan.offset(3), 8u);
}

TEST(PathConfig, Validation) {
  PathConfig c;
  EXPECT_NO_THROW(c.validate());
  c.stream_count = 0;
  EXPECT_THROW(c.validate(), Error);
  c.stream_count = 257;
  EXPECT_THROW(c.validate(), Error);
  c.stream_count = 1;
  c.chunk_size = 0;
  EXPECT_THROW(c.validate(), Error);
  c.chunk_size = 1;
  c.pacing_rate = 0;
  EXPECT_THROW(c.validate(), Error);
}

TEST_F(PathTest, CreatePathMinimal) {
  auto [server, client] = pair(1);
  EXPECT_TRUE(lib.is_open(server));
  EXPECT_TRUE(lib.is_open(client));
  EXPECT_NE(server, client);
  EXPECT_EQ(lib.config(client).stream_count, 1u);
}

TEST_F(PathTest, CreatePathThroughServerRole) {
  auto port = test_support::free_port();
  auto server = std::async(std::launch::async, [&] {
    return lib.create_path({"127.0.0.1", port}, 2, Role::server, manual());
  });
  auto client = lib.create_path({"127.0.0.1", port}, 2, Role::client, manual());
  auto server_id = server.get();
  auto got = std::async(std::launch::async, [&] { return lib.recv(server_id, 5); });
  lib.send(client, as_bytes("hello"));
  EXPECT_EQ(got.get(), to_buffer("hello"));
}

TEST_F(PathTest, ZeroStreamsIsAPreconditionError) {
  EXPECT_EQ(error_code_of([&] { lib.create_path({"127.0.0.1", 1}, 0, Role::client, manual()); }),
            Errc::precondition);
}

TEST_F(PathTest, ThirtyTwoStreams) {
  auto [server, client] = pair(32);
  EXPECT_EQ(lib.config(server).stream_count, 32u);
  EXPECT_EQ(lib.stream_stats(client).size(), 32u);
}

TEST_F(PathTest, ClientGivesUpWhenNobodyListens) {
  auto port = test_support::free_port();
  auto start = Clock::now();
  EXPECT_EQ(error_code_of([&] { lib.create_path({"127.0.0.1", port}, 1, Role::client, manual(), Seconds(0.3)); }),
            Errc::connect_failed);
  EXPECT_LT(Seconds(Clock::now() - start).count(), 3.0);
  EXPECT_TRUE(lib.paths().empty());
}

TEST_F(PathTest, DestroyInvalidatesId) {
  auto [server, client] = pair(1);
  lib.destroy_path(client);
  EXPECT_FALSE(lib.is_open(client));
  EXPECT_EQ(error_code_of([&] { lib.send(client, as_bytes("x")); }), Errc::no_such_path);
  EXPECT_EQ(error_code_of([&] { lib.destroy_path(client); }), Errc::no_such_path);
}

TEST_F(PathTest, IdsAreNeverReused) {
  auto [a, b] = pair(1);
  lib.destroy_path(a);
  lib.destroy_path(b);
  auto [c, d] = pair(1);
  EXPECT_GT(std::min(c, d), std::max(a, b));
}

TEST_F(PathTest, DestroyFailsInFlightHandle) {
  auto [server, client] = pair(2);
  auto handle = lib.isend_recv(client, {}, 8 * MiB);
  std::this_thread::sleep_for(20ms);
  EXPECT_FALSE(lib.has_finished(handle));
  lib.destroy_path(client);
  EXPECT_EQ(error_code_of([&] { lib.wait(handle); }), Errc::transfer_failed);
}

TEST_F(PathTest, EmptySendAndReceive) {
  auto [server, client] = pair(4);
  lib.send(client, {});
  EXPECT_TRUE(lib.recv(server, 0).empty());
}

TEST_F(PathTest, SixtyFourMiBOverFourStreams) {
  auto [server, client] = pair(4);
  auto data = random_buffer(64 * MiB, 1);
  auto got = std::async(std::launch::async, [&, s = server] { return lib.recv(s, data.size()); });
  lib.send(client, data);
  EXPECT_EQ(sha256(got.get()), sha256(data));
  std::uint64_t total = 0;
  for (const auto& st : lib.stream_stats(client)) total += st.bytes_sent;
  EXPECT_EQ(total, data.size());
}

TEST_F(PathTest, SendRecvExchangesBothWays) {
  auto [server, client] = pair(3);
  auto x = random_buffer(KiB, 2), y = random_buffer(KiB, 3);
  auto got = std::async(std::launch::async, [&, s = server] { return lib.send_recv(s, x, y.size()); });
  EXPECT_EQ(lib.send_recv(client, y, x.size()), x);
  EXPECT_EQ(got.get(), y);
  EXPECT_TRUE(lib.send_recv(client, {}, 0).empty());
}

TEST_F(PathTest, SendRecvShortPeerIsTruncation) {
  auto [server, client] = pair(1);
  auto got = std::async(std::launch::async, [&, c = client] { return lib.send_recv(c, {}, 10); });
  lib.send(server, as_bytes("12345"));
  lib.destroy_path(server);
  EXPECT_EQ(error_code_of([&] { got.get(); }), Errc::truncated);
  EXPECT_EQ(error_code_of([&] { lib.send(client, as_bytes("x")); }), Errc::closed);
}

TEST_F(PathTest, DynamicExchangeOfUnknownSizes) {
  auto [server, client] = pair(2);
  auto x = random_buffer(5, 4), y = random_buffer(12, 5);
  auto got = std::async(std::launch::async, [&, s = server] { return lib.dsend_recv(s, x); });
  EXPECT_EQ(lib.dsend_recv(client, y), x);
  EXPECT_EQ(got.get(), y);

  auto empty = std::async(std::launch::async, [&, s = server] { return lib.dsend_recv(s, {}); });
  EXPECT_TRUE(lib.dsend_recv(client, {}).empty());
  EXPECT_TRUE(empty.get().empty());
}

TEST_F(PathTest, DynamicCacheGrowsGeometricallyAndIsReused) {
  auto [server, client] = pair(2);
  auto exchange = [&](std::size_t n) {
    auto out = random_buffer(n, n);
    auto got = std::async(std::launch::async, [&, s = server] { return lib.dsend_recv(s, {}); });
    lib.dsend_recv(client, out);
    EXPECT_EQ(got.get(), out);
  };
  exchange(1000);
  auto first = lib.dynamic_cache_capacity(server);
  EXPECT_GE(first, 1000u);
  EXPECT_EQ(first & (first - 1), 0u) << "capacity grows by doubling from 1";
  exchange(10);
  EXPECT_EQ(lib.dynamic_cache_capacity(server), first);
  exchange(5000);
  EXPECT_EQ(lib.dynamic_cache_capacity(server), 8192u);
}

TEST_F(PathTest, OversizeAdvertisementClosesPath) {
  auto listener = Listener::bind({"127.0.0.1", 0});
  auto accepted = std::async(std::launch::async, [&] { return lib.accept_path(listener, 1, manual()); });
  auto raw = connect_streams({"127.0.0.1", listener.port()}, 77, 1, Seconds(5));
  auto id = accepted.get();
  std::byte header[8];
  store_be<std::uint64_t>(header, 1ull << 62);
  send_chunked(raw[0], header, 8);
  EXPECT_EQ(error_code_of([&] { lib.dsend_recv(id, {}); }), Errc::oversize);
  EXPECT_FALSE(lib.is_open(id));
  EXPECT_EQ(error_code_of([&] { lib.dsend_recv(id, {}); }), Errc::no_such_path);
}

TEST_F(PathTest, OversizeCapIsConfigurable) {
  auto config = manual();
  config.max_dynamic_size = 100;
  auto [server, client] = pair(1, config);
  auto got = std::async(std::launch::async, [&, s = server] { return lib.dsend_recv(s, {}); });
  auto big = random_buffer(101, 1);
  try {
    lib.dsend_recv(client, big);
  } catch (const Error&) {
  }
  EXPECT_EQ(error_code_of([&] { got.get(); }), Errc::oversize);
}

TEST_F(PathTest, BarrierWaitsForBothSides) {
  auto [server, client] = pair(1);
  auto start = Clock::now();
  auto late = std::async(std::launch::async, [&, s = server] {
    std::this_thread::sleep_for(100ms);
    lib.barrier(s);
  });
  lib.barrier(client);
  EXPECT_GE(Seconds(Clock::now() - start).count(), 0.095);
  late.get();
}

TEST_F(PathTest, BarrierFailsWhenPeerLeaves) {
  auto [server, client] = pair(1);
  auto waiting = std::async(std::launch::async, [&, c = client] { lib.barrier(c); });
  std::this_thread::sleep_for(20ms);
  lib.destroy_path(server);
  EXPECT_EQ(error_code_of([&] { waiting.get(); }), Errc::barrier);
}

TEST_F(PathTest, BarrierNeverReturnsBeforeLaterEntry) {
  auto [server, client] = pair(1);
  std::mt19937 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    auto skew = std::chrono::milliseconds(rng() % 20);
    bool server_late = rng() % 2;
    Clock::time_point enter[2], leave[2];
    auto side = [&](int who, PathId id, bool late) {
      if (late) std::this_thread::sleep_for(skew);
      enter[who] = Clock::now();
      lib.barrier(id);
      leave[who] = Clock::now();
    };
    auto other = std::async(std::launch::async, side, 0, server, server_late);
    side(1, client, !server_late);
    other.get();
    auto later_entry = std::max(enter[0], enter[1]);
    EXPECT_GE(leave[0], later_entry);
    EXPECT_GE(leave[1], later_entry);
  }
}

TEST_F(PathTest, CycleRingOfThree) {
  std::vector<std::pair<PathId, PathId>> ring;
  for (int i = 0; i < 3; ++i) ring.push_back(pair(2));
  std::vector<MessageBuffer> tokens;
  for (int i = 0; i < 3; ++i) tokens.push_back(random_buffer(KiB, 20 + i));
  std::vector<std::future<MessageBuffer>> results;
  // Node k sends on link k (client end) and receives on link k-1 (server end).
  for (int k = 0; k < 3; ++k)
    results.push_back(std::async(std::launch::async, [&, k] {
      return lib.cycle(ring[(k + 2) % 3].first, ring[k].second, tokens[k], KiB);
    }));
  for (int k = 0; k < 3; ++k) EXPECT_EQ(results[k].get(), tokens[(k + 2) % 3]) << "node " << k;
}

TEST_F(PathTest, CycleNeedsDistinctPaths) {
  auto [server, client] = pair(1);
  EXPECT_EQ(error_code_of([&] { lib.cycle(client, client, {}, 0); }), Errc::precondition);
  EXPECT_EQ(error_code_of([&] { lib.dcycle(client, client, {}); }), Errc::precondition);
}

TEST_F(PathTest, CycleWithNothingToReceiveIsAForwardSend) {
  auto [in_srv, in_cli] = pair(1);
  auto [out_srv, out_cli] = pair(2);
  auto data = random_buffer(3000, 7);
  auto got = std::async(std::launch::async, [&, s = out_srv] { return lib.recv(s, data.size()); });
  EXPECT_TRUE(lib.cycle(in_srv, out_cli, data, 0).empty());
  EXPECT_EQ(got.get(), data);
}

TEST_F(PathTest, CycleReportsFailingPath) {
  auto [in_srv, in_cli] = pair(1);
  auto [out_srv, out_cli] = pair(1);
  lib.destroy_path(in_cli);
  try {
    lib.cycle(in_srv, out_cli, {}, 10);
    FAIL() << "expected failure";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("path " + std::to_string(in_srv)), std::string::npos) << e.what();
  }
}

TEST_F(PathTest, DcycleRingWithMixedSizes) {
  std::vector<std::pair<PathId, PathId>> ring;
  for (int i = 0; i < 3; ++i) ring.push_back(pair(3));
  std::vector<MessageBuffer> tokens{random_buffer(0, 1), random_buffer(17, 2), random_buffer(300 * KiB, 3)};
  std::vector<std::future<MessageBuffer>> results;
  for (int k = 0; k < 3; ++k)
    results.push_back(std::async(std::launch::async, [&, k] {
      return lib.dcycle(ring[(k + 2) % 3].first, ring[k].second, tokens[k]);
    }));
  for (int k = 0; k < 3; ++k) EXPECT_EQ(results[k].get(), tokens[(k + 2) % 3]) << "node " << k;
}

TEST_F(PathTest, RelayForwardsSixtyFourMiB) {
  auto [a_srv, a_cli] = pair(4);
  auto [b_srv, b_cli] = pair(4);
  auto relay = std::async(std::launch::async, [&, x = a_srv, y = b_cli] { lib.relay(x, y); });
  auto data = random_buffer(64 * MiB, 9);
  auto got = std::async(std::launch::async, [&, d = b_srv] { return lib.recv(d, data.size()); });
  lib.send(a_cli, data);
  EXPECT_EQ(sha256(got.get()), sha256(data));
  // Traffic flows back as well.
  auto back = std::async(std::launch::async, [&, c = a_cli] { return lib.recv(c, 3); });
  lib.send(b_srv, as_bytes("ack"));
  EXPECT_EQ(back.get(), to_buffer("ack"));
  lib.destroy_path(a_cli);
  relay.get();
  EXPECT_FALSE(lib.is_open(a_srv));
  EXPECT_FALSE(lib.is_open(b_cli));
}

TEST_F(PathTest, RelayEndsWhenOneSideCloses) {
  auto [a_srv, a_cli] = pair(2);
  auto [b_srv, b_cli] = pair(2);
  lib.destroy_path(a_cli);
  lib.relay(a_srv, b_cli);
  EXPECT_EQ(error_code_of([&] { lib.recv(b_srv, 1); }), Errc::truncated);
}

TEST_F(PathTest, RelayNeedsEqualStreamCounts) {
  auto [a_srv, a_cli] = pair(2);
  auto [b_srv, b_cli] = pair(3);
  EXPECT_EQ(error_code_of([&] { lib.relay(a_srv, b_cli); }), Errc::precondition);
}

TEST_F(PathTest, NonBlockingMatchesBlocking) {
  auto [server, client] = pair(2);
  auto x = random_buffer(100 * KiB, 1), y = random_buffer(33, 2);
  auto h = lib.isend_recv(client, y, x.size());
  auto blocking = lib.send_recv(server, x, y.size());
  EXPECT_EQ(lib.wait(h), x);
  EXPECT_EQ(blocking, y);
}

TEST_F(PathTest, NonBlockingOnClosedPath) {
  auto [server, client] = pair(1);
  lib.destroy_path(client);
  EXPECT_EQ(error_code_of([&] { lib.isend_recv(client, {}, 1); }), Errc::no_such_path);
}

TEST_F(PathTest, SecondTransferOnBusyPathIsRejected) {
  auto [server, client] = pair(1);
  auto h = lib.isend_recv(client, {}, 4);
  EXPECT_EQ(error_code_of([&] { lib.isend_recv(client, {}, 4); }), Errc::busy);
  EXPECT_EQ(error_code_of([&] { lib.send(client, as_bytes("x")); }), Errc::busy);
  lib.send(server, as_bytes("abcd"));
  EXPECT_EQ(lib.wait(h), to_buffer("abcd"));
  lib.send(client, as_bytes("x"));
}

TEST_F(PathTest, HandleLifecycle) {
  auto [server, client] = pair(1);
  EXPECT_EQ(error_code_of([&] { lib.has_finished(987654); }), Errc::no_such_handle);
  auto h = lib.isend_recv(client, {}, 4);
  EXPECT_FALSE(lib.has_finished(h));
  lib.send(server, as_bytes("done"));
  while (!lib.has_finished(h)) std::this_thread::sleep_for(1ms);
  auto start = Clock::now();
  EXPECT_EQ(lib.wait(h), to_buffer("done"));
  EXPECT_LT(Seconds(Clock::now() - start).count(), 0.05);
  EXPECT_TRUE(lib.has_finished(h));
  EXPECT_EQ(error_code_of([&] { lib.wait(h); }), Errc::no_such_handle);
}

TEST_F(PathTest, HasFinishedIsMonotone) {
  auto [server, client] = pair(2);
  auto h = lib.isend_recv(client, random_buffer(2 * MiB, 1), 2 * MiB);
  auto peer = std::async(std::launch::async, [&, s = server] { return lib.send_recv(s, random_buffer(2 * MiB, 2), 2 * MiB); });
  bool seen = false;
  for (int i = 0; i < 2000; ++i) {
    bool now = lib.has_finished(h);
    EXPECT_FALSE(seen && !now);
    seen = seen || now;
    if (seen && i > 50) break;
    std::this_thread::sleep_for(200us);
  }
  peer.get();
  lib.wait(h);
}

TEST_F(PathTest, ChunkSizeLimitsEachWrite) {
  auto [server, client] = pair(2);
  lib.configure(client, Setting::chunk_size, MiB);
  auto data = random_buffer(8 * MiB, 3);
  auto got = std::async(std::launch::async, [&, s = server] { return lib.recv(s, data.size()); });
  lib.send(client, data);
  EXPECT_EQ(got.get(), data);
  for (const auto& st : lib.stream_stats(client)) {
    EXPECT_LE(st.largest_chunk, MiB);
    EXPECT_EQ(st.chunk_writes, 4u);
  }
}

TEST_F(PathTest, ConfigureValidatesValues) {
  auto [server, client] = pair(1);
  EXPECT_EQ(error_code_of([&] { lib.configure(client, Setting::pacing_rate, 0); }), Errc::range);
  EXPECT_EQ(error_code_of([&] { lib.configure(client, Setting::chunk_size, 0); }), Errc::range);
  EXPECT_EQ(error_code_of([&] { lib.configure(client, Setting::window, 0); }), Errc::range);
  EXPECT_EQ(error_code_of([&] { lib.configure(client, Setting::autotune, 2); }), Errc::range);
  EXPECT_EQ(error_code_of([&] { lib.configure(999999, Setting::chunk_size, 1); }), Errc::no_such_path);
}

TEST_F(PathTest, WindowIsAppliedToEveryStream) {
  auto [server, client] = pair(3);
  lib.set_window(client, 256 * KiB);
  for (auto w : lib.granted_windows(client)) {
    ASSERT_TRUE(w.has_value());
    EXPECT_GE(*w, 256 * KiB);
  }
  EXPECT_EQ(lib.config(client).window, 256 * KiB);
}

TEST_F(PathTest, PacingRateSlowsTransfers) {
  auto [server, client] = pair(1);
  lib.set_pacing_rate(client, 8 * MiB);
  auto data = random_buffer(4 * MiB, 4);
  auto got = std::async(std::launch::async, [&, s = server] { return lib.recv(s, data.size()); });
  auto start = Clock::now();
  lib.send(client, data);
  double elapsed = Seconds(Clock::now() - start).count();
  got.get();
  EXPECT_NEAR(elapsed, 0.5, 0.15);
  lib.set_pacing_rate(client, std::nullopt);
  EXPECT_FALSE(lib.config(client).pacing_rate.has_value());
}

TEST_F(PathTest, DisabledAutotuneLeavesConfigUntouched) {
  auto config = manual();
  config.chunk_size = 12345;
  auto [server, client] = pair(2, config);
  EXPECT_EQ(lib.config(client).chunk_size, 12345u);
  EXPECT_EQ(lib.config(server).chunk_size, 12345u);
}

TEST(Finalize, ClosesEverythingAndCanBeRepeated) {
  Library lib;
  std::vector<PathId> ids;
  for (int i = 0; i < 3; ++i) {
    auto [s, c] = connect_loopback_pair(lib, 1);
    ids.push_back(s);
    ids.push_back(c);
  }
  lib.finalize();
  EXPECT_TRUE(lib.paths().empty());
  for (auto id : ids) EXPECT_EQ(error_code_of([&] { lib.send(id, as_bytes("x")); }), Errc::no_such_path);
  lib.finalize();
  EXPECT_EQ(error_code_of([&] { connect_loopback_pair(lib, 1); }), Errc::not_initialized);
  lib.init();
  auto [s, c] = connect_loopback_pair(lib, 1);
  EXPECT_TRUE(lib.is_open(s));
}

TEST(Finalize, JoinsInFlightTransfers) {
  Library lib;
  auto [s, c] = connect_loopback_pair(lib, 1);
  lib.isend_recv(c, {}, 10 * MiB);
  lib.finalize();
  SUCCEED();
}

class RoundTrip : public ::testing::TestWithParam<std::size_t> {};

TEST_P(RoundTrip, RandomSizesAndChunks) {
  Library lib;
  auto [server, client] = connect_loopback_pair(lib, GetParam());
  std::mt19937_64 rng(GetParam());
  for (int trial = 0; trial < 6; ++trial) {
    auto data = random_buffer(rng() % (2 * MiB), rng());
    std::size_t chunk = 1 + rng() % MiB;
    lib.set_chunk_size(client, chunk);
    auto got = std::async(std::launch::async, [&, s = server] { return lib.recv(s, data.size()); });
    lib.send(client, data);
    ASSERT_EQ(got.get(), data) << "size " << data.size() << " chunk " << chunk;
  }
}

INSTANTIATE_TEST_SUITE_P(StreamCounts, RoundTrip, ::testing::Values(1, 2, 32, 256));
