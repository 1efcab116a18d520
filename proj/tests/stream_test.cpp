#include <arpa/inet.h>
#include <dirent.h>
#include <netdb.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <future>
#include <random>
#include <thread>

#include <gtest/gtest.h>

#include "mpw/error.hpp"
#include "mpw/stream.hpp"
#include "test_support.hpp"

using namespace mpw;
using namespace std::chrono_literals;

namespace {

/// Platform resolver used as an independent oracle for resolve_host.
std::string oracle_resolve(const char* name) {
  hostent* h = ::gethostbyname(name);
  if (!h || h->h_addrtype != AF_INET) return {};
  char text[INET_ADDRSTRLEN];
  ::inet_ntop(AF_INET, h->h_addr_list[0], text, sizeof text);
  return text;
}

Socket raw_connect(std::uint16_t port) {
  Socket s(::socket(AF_INET, SOCK_STREAM, 0));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  if (::connect(s.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) ADD_FAILURE() << "raw connect";
  return s;
}

void raw_write(const Socket& s, ByteView data) {
  ASSERT_EQ(::send(s.fd(), data.data(), data.size(), MSG_NOSIGNAL), static_cast<ssize_t>(data.size()));
}

/// Connected stream pair over loopback: {accepted side, connecting side}.
std::pair<Stream, Stream> stream_pair() {
  auto listener = Listener::bind({"127.0.0.1", 0});
  auto accepted = std::async(std::launch::async, [&] { return listener.accept_streams({7, 1}, Seconds(5)); });
  auto connected = connect_streams({"127.0.0.1", listener.port()}, 7, 1, Seconds(5));
  auto server = accepted.get();
  return {std::move(server[0]), std::move(connected[0])};
}

}  // namespace

TEST(ResolveHost, DottedQuadIsReturnedUnchanged) { EXPECT_EQ(resolve_host("127.0.0.1"), "127.0.0.1"); }

TEST(ResolveHost, LocalhostMatchesPlatformResolver) {
  auto expected = oracle_resolve("localhost");
  ASSERT_FALSE(expected.empty());
  EXPECT_EQ(resolve_host("localhost"), expected);
}

TEST(ResolveHost, InvalidTldIsUnresolvable) {
  try {
    resolve_host("no-such-host.invalid");
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::unresolvable_host);
  }
}

TEST(Handshake, WireLayoutIsBigEndian) {
  auto wire = StreamHandshake{0xA1B2C3D4, 0x0102, 0x0103}.encode();
  const unsigned char expected[] = {'M', 'P', 'W', 'P', 0x01, 0xA1, 0xB2, 0xC3, 0xD4, 0x01, 0x02, 0x01, 0x03};
  ASSERT_EQ(wire.size(), sizeof expected);
  for (std::size_t i = 0; i < wire.size(); ++i) EXPECT_EQ(std::to_integer<unsigned>(wire[i]), expected[i]) << i;
}

TEST(Handshake, RejectsCountOutOfRange) {
  auto wire = StreamHandshake{1, 0, 1}.encode();
  store_be<std::uint16_t>(wire.data() + 11, 257);
  EXPECT_THROW(StreamHandshake::decode(wire), Error);
  store_be<std::uint16_t>(wire.data() + 11, 0);
  EXPECT_THROW(StreamHandshake::decode(wire), Error);
}

TEST(ListenAccept, SingleStream) {
  auto listener = Listener::bind({"127.0.0.1", 0});
  auto accepted = std::async(std::launch::async, [&] { return listener.accept_streams({42, 1}, Seconds(5)); });
  auto client = connect_streams({"127.0.0.1", listener.port()}, 42, 1, Seconds(5));
  auto streams = accepted.get();
  ASSERT_EQ(streams.size(), 1u);
  EXPECT_EQ(streams[0].handshake().stream_index, 0);
  EXPECT_EQ(streams[0].handshake().path_id, 42u);
}

TEST(ListenAccept, OutOfOrderArrivalsAreSorted) {
  auto listener = Listener::bind({"127.0.0.1", 0});
  auto accepted = std::async(std::launch::async, [&] { return listener.accept_streams({9, 4}, Seconds(5)); });
  std::vector<Socket> raw;
  for (std::uint16_t index : {2, 0, 3, 1}) {
    raw.push_back(raw_connect(listener.port()));
    raw_write(raw.back(), StreamHandshake{9, index, 4}.encode());
    std::this_thread::sleep_for(5ms);
  }
  auto streams = accepted.get();
  ASSERT_EQ(streams.size(), 4u);
  for (std::uint16_t i = 0; i < 4; ++i) EXPECT_EQ(streams[i].handshake().stream_index, i);
}

TEST(ListenAccept, WrongMagicAndWrongPathAreDropped) {
  auto listener = Listener::bind({"127.0.0.1", 0});
  auto accepted = std::async(std::launch::async, [&] { return listener.accept_streams({5, 1}, Seconds(5)); });
  auto bad_magic = raw_connect(listener.port());
  auto wire = StreamHandshake{5, 0, 1}.encode();
  wire[1] = std::byte{'X'};
  raw_write(bad_magic, wire);
  auto wrong_path = raw_connect(listener.port());
  raw_write(wrong_path, StreamHandshake{6, 0, 1}.encode());
  std::this_thread::sleep_for(50ms);
  auto good = raw_connect(listener.port());
  raw_write(good, StreamHandshake{5, 0, 1}.encode());
  auto streams = accepted.get();
  ASSERT_EQ(streams.size(), 1u);
  EXPECT_EQ(streams[0].handshake().path_id, 5u);

  // The dropped connections were closed by the listener.
  std::byte b;
  EXPECT_EQ(::recv(bad_magic.fd(), &b, 1, 0), 0);
  EXPECT_EQ(::recv(wrong_path.fd(), &b, 1, 0), 0);
}

TEST(ListenAccept, TimesOutWhenStreamsAreMissing) {
  auto listener = Listener::bind({"127.0.0.1", 0});
  const auto fds_before = test_support::open_fd_count();
  auto accepted = std::async(std::launch::async, [&] { return listener.accept_streams({3, 2}, Seconds(0.3)); });
  {
    auto one = connect_streams({"127.0.0.1", listener.port()}, 3, 1, Seconds(5));
    // A count mismatch (1 vs 2) is dropped; send a proper index 0 of 2 instead.
    auto raw = raw_connect(listener.port());
    raw_write(raw, StreamHandshake{3, 0, 2}.encode());
    try {
      accepted.get();
      FAIL() << "expected timeout";
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::timeout);
    }
  }
  EXPECT_EQ(test_support::open_fd_count(), fds_before);
}

TEST(ListenAccept, DuplicateIndexIsAProtocolError) {
  auto listener = Listener::bind({"127.0.0.1", 0});
  auto accepted = std::async(std::launch::async, [&] { return listener.accept_streams({3, 2}, Seconds(5)); });
  auto a = raw_connect(listener.port());
  raw_write(a, StreamHandshake{3, 1, 2}.encode());
  auto b = raw_connect(listener.port());
  raw_write(b, StreamHandshake{3, 1, 2}.encode());
  try {
    accepted.get();
    FAIL() << "expected protocol error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::protocol);
  }
}

TEST(ListenAccept, FreeFunctionBindsAndAccepts) {
  auto port = test_support::free_port();
  auto accepted = std::async(std::launch::async, [&] {
    return listen_accept_streams({"127.0.0.1", port}, 11, 2, Seconds(5));
  });
  std::vector<Stream> client;
  for (int attempt = 0; attempt < 100 && client.empty(); ++attempt) {
    try {
      client = connect_streams({"127.0.0.1", port}, 11, 2, Seconds(1));
    } catch (const Error&) {
      std::this_thread::sleep_for(10ms);
    }
  }
  ASSERT_EQ(client.size(), 2u);
  EXPECT_EQ(accepted.get().size(), 2u);
}

TEST(ConnectStreams, TwoHundredFiftySixStreams) {
  auto listener = Listener::bind({"127.0.0.1", 0});
  auto accepted = std::async(std::launch::async, [&] { return listener.accept_streams({1, 256}, Seconds(10)); });
  auto client = connect_streams({"127.0.0.1", listener.port()}, 1, 256, Seconds(10));
  auto server = accepted.get();
  ASSERT_EQ(client.size(), 256u);
  ASSERT_EQ(server.size(), 256u);
  for (std::size_t i = 0; i < 256; ++i) {
    EXPECT_EQ(client[i].handshake().stream_index, i);
    EXPECT_EQ(server[i].handshake().stream_index, i);
  }
}

TEST(ConnectStreams, NotListeningLeavesNoSockets) {
  auto port = test_support::free_port();
  const auto fds_before = test_support::open_fd_count();
  try {
    connect_streams({"127.0.0.1", port}, 1, 4, Seconds(2));
    FAIL() << "expected connect error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::connect_failed);
  }
  EXPECT_EQ(test_support::open_fd_count(), fds_before);
}

TEST(ConnectStreams, CountOutOfRange) {
  EXPECT_THROW(connect_streams({"127.0.0.1", 1}, 1, 0, Seconds(1)), Error);
  EXPECT_THROW(connect_streams({"127.0.0.1", 1}, 1, 257, Seconds(1)), Error);
}

TEST(SendChunked, EmptyBufferWritesNothing) {
  auto [server, client] = stream_pair();
  std::size_t calls = 0;
  client.on_chunk = [&](std::size_t) { ++calls; };
  EXPECT_EQ(send_chunked(client, {}, 4), 0u);
  EXPECT_EQ(calls, 0u);
}

TEST(SendChunked, SlicesByChunkSize) {
  auto [server, client] = stream_pair();
  std::vector<std::size_t> writes;
  client.on_chunk = [&](std::size_t n) { writes.push_back(n); };
  auto data = to_buffer("0123456789");
  EXPECT_EQ(send_chunked(client, data, 4), 10u);
  EXPECT_EQ(writes, (std::vector<std::size_t>{4, 4, 2}));
  MessageBuffer got(10);
  recv_exact(server, got);
  EXPECT_EQ(got, data);
  EXPECT_EQ(client.stats().largest_chunk, 4u);
  EXPECT_EQ(client.stats().chunk_writes, 3u);
}

TEST(SendChunked, ZeroChunkSizeIsARangeError) {
  auto [server, client] = stream_pair();
  auto data = to_buffer("x");
  EXPECT_THROW(send_chunked(client, data, 0), Error);
}

TEST(SendChunked, PacingStretchesWallTime) {
  auto [server, client] = stream_pair();
  client.set_pacing_rate(4 * MiB);
  MessageBuffer data(2 * MiB);
  auto reader = std::async(std::launch::async, [&] {
    MessageBuffer got(data.size());
    recv_exact(server, got);
  });
  auto start = Clock::now();
  send_chunked(client, data, 256 * KiB);
  Seconds elapsed = Clock::now() - start;
  reader.get();
  EXPECT_GE(elapsed.count(), 0.45);
  EXPECT_LE(elapsed.count(), 0.75);
}

TEST(SendChunked, ReportsBytesSentWhenPeerResets) {
  auto [server, client] = stream_pair();
  server.close();
  MessageBuffer big(16 * MiB);
  try {
    send_chunked(client, big, MiB);
    FAIL() << "expected transport error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::transport);
    EXPECT_LT(e.bytes(), big.size());
  }
}

TEST(RecvExact, ZeroBytesIsImmediate) {
  auto [server, client] = stream_pair();
  recv_exact(server, {});
}

TEST(RecvExact, AssemblesPartialWrites) {
  auto [server, client] = stream_pair();
  auto writer = std::async(std::launch::async, [&c = client] {
    send_chunked(c, as_bytes("hello"), 5);
    std::this_thread::sleep_for(30ms);
    send_chunked(c, as_bytes("world"), 5);
  });
  MessageBuffer got(10);
  recv_exact(server, got);
  writer.get();
  EXPECT_EQ(got, to_buffer("helloworld"));
}

TEST(RecvExact, TruncatedStreamReportsCount) {
  auto [server, client] = stream_pair();
  send_chunked(client, as_bytes("12345"), 5);
  client.close();
  MessageBuffer got(10);
  try {
    recv_exact(server, got);
    FAIL() << "expected truncation";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::truncated);
    EXPECT_EQ(e.bytes(), 5u);
  }
}

TEST(PacingDelay, Examples) {
  EXPECT_EQ(pacing_delay(0, 1).count(), 0.0);
  EXPECT_EQ(pacing_delay(MiB, MiB).count(), 1.0);
  EXPECT_EQ(pacing_delay(8 * MiB, 16 * MiB).count(), 0.5);
  EXPECT_THROW(pacing_delay(1, 0), Error);
}

TEST(PacingDelay, IsAdditive) {
  std::mt19937_64 rng(1234);
  for (int i = 0; i < 1000; ++i) {
    std::uint64_t a = rng() % (1ull << 40), b = rng() % (1ull << 40), r = 1 + rng() % (1ull << 32);
    double whole = pacing_delay(a + b, r).count();
    double parts = pacing_delay(a, r).count() + pacing_delay(b, r).count();
    EXPECT_NEAR(whole, parts, 1e-12 * std::max(1.0, whole));
  }
}

TEST(ApplyWindow, GrantedValueMatchesSocketQuery) {
  auto [server, client] = stream_pair();
  auto granted = apply_window(client, 65536);
  int actual = 0;
  socklen_t len = sizeof actual;
  ASSERT_EQ(::getsockopt(client.fd(), SOL_SOCKET, SO_SNDBUF, &actual, &len), 0);
  EXPECT_EQ(granted, static_cast<std::size_t>(actual));
  EXPECT_GE(granted, 65536u);
  EXPECT_EQ(client.window_bytes(), granted);
}

TEST(ApplyWindow, TinyWindowIsClampedWithoutError) {
  auto [server, client] = stream_pair();
  auto granted = apply_window(client, 1);
  EXPECT_GT(granted, 1u);
  EXPECT_TRUE(client.warnings().empty());
}

TEST(ApplyWindow, ClosedStreamIsAnError) {
  auto [server, client] = stream_pair();
  client.close();
  EXPECT_THROW(apply_window(client, 65536), Error);
}

TEST(StreamProperties, ByteTransparencyForRandomBuffersAndChunks) {
  std::mt19937_64 rng(99);
  auto [server, client] = stream_pair();
  for (int trial = 0; trial < 40; ++trial) {
    MessageBuffer data(rng() % (300 * KiB));
    for (auto& b : data) b = static_cast<std::byte>(rng());
    std::size_t chunk = 1 + rng() % (64 * KiB);
    auto reader = std::async(std::launch::async, [&s = server, n = data.size(), &rng] {
      MessageBuffer got(n);
      std::size_t done = 0;
      while (done < n) {
        std::size_t piece = std::min<std::size_t>(n - done, 1 + rng() % 5000);
        recv_exact(s, MutableByteView(got.data() + done, piece));
        done += piece;
      }
      return got;
    });
    send_chunked(client, data, chunk);
    ASSERT_EQ(reader.get(), data) << "trial " << trial;
  }
}
