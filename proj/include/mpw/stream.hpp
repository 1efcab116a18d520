#pragma once

#include <array>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mpw/bytes.hpp"
#include "mpw/endpoint.hpp"
#include "mpw/socket.hpp"

namespace mpw {

using PathTag = std::uint32_t;
using Clock = std::chrono::steady_clock;
using Seconds = std::chrono::duration<double>;

inline constexpr std::size_t kMaxStreams = 256;
inline constexpr std::size_t kDefaultChunkSize = 8 * MiB;

/// First bytes written on every stream: identifies the path and the stream's
/// position in it. Wire layout (big-endian):
///   "MPWP" | version (1) | path_id (4) | stream_index (2) | stream_count (2)
struct StreamHandshake {
  static constexpr std::array<std::byte, 4> kMagic{std::byte{'M'}, std::byte{'P'}, std::byte{'W'},
                                                   std::byte{'P'}};
  static constexpr std::uint8_t kVersion = 0x01;
  static constexpr std::size_t kWireSize = 13;

  PathTag path_id = 0;
  std::uint16_t stream_index = 0;
  std::uint16_t stream_count = 1;

  std::array<std::byte, kWireSize> encode() const;
  /// Throws Error(protocol) on bad magic, version, or index/count.
  static StreamHandshake decode(ByteView wire);

  friend bool operator==(const StreamHandshake&, const StreamHandshake&) = default;
};

struct StreamStats {
  std::uint64_t bytes_sent = 0;
  std::uint64_t bytes_received = 0;
  std::uint64_t chunk_writes = 0;
  std::size_t largest_chunk = 0;
};

/// One TCP connection of a path. Single owner; one sender and one receiver
/// may use it concurrently.
class Stream {
 public:
  Stream(Socket socket, StreamHandshake handshake);

  const StreamHandshake& handshake() const noexcept { return handshake_; }
  int fd() const noexcept { return socket_.fd(); }
  bool is_open() const noexcept { return socket_.valid(); }

  /// Granted socket buffer size after the last apply_window, if any.
  std::optional<std::size_t> window_bytes() const noexcept { return window_bytes_; }
  std::optional<std::uint64_t> pacing_rate() const noexcept { return pacing_rate_; }
  void set_pacing_rate(std::optional<std::uint64_t> bytes_per_second);

  const StreamStats& stats() const noexcept { return stats_; }
  const std::vector<std::string>& warnings() const noexcept { return warnings_; }

  /// Called with the size of every chunk handed to the transport.
  std::function<void(std::size_t)> on_chunk;

  void shutdown() const noexcept { socket_.shutdown_both(); }
  void shutdown_write() const noexcept { socket_.shutdown_write(); }
  void close() noexcept { socket_.close(); }

 private:
  friend std::size_t send_chunked(Stream&, ByteView, std::size_t);
  friend void recv_exact(Stream&, MutableByteView);
  friend std::size_t recv_some(Stream&, MutableByteView);
  friend std::size_t apply_window(Stream&, std::size_t);

  Socket socket_;
  StreamHandshake handshake_;
  std::optional<std::size_t> window_bytes_;
  std::optional<std::uint64_t> pacing_rate_;
  StreamStats stats_;
  std::vector<std::string> warnings_;
};

/// Returns a dotted quad. Dotted-quad input is returned unchanged.
std::string resolve_host(std::string_view name);

struct AcceptOptions {
  /// Unset: the first valid handshake fixes the path id.
  std::optional<PathTag> path_id;
  /// Unset: the first valid handshake fixes the stream count.
  std::optional<std::uint16_t> stream_count;
};

/// Bound, listening TCP socket that assembles incoming streams into paths.
class Listener {
 public:
  /// Port 0 binds an ephemeral port; see port().
  static Listener bind(const Endpoint& where);

  std::uint16_t port() const noexcept { return port_; }
  int fd() const noexcept { return socket_.fd(); }

  /// Accepts connections until a full set of streams for one path has
  /// arrived. Connections with a wrong magic, path id, or count are dropped.
  /// Returned streams are ordered by stream_index.
  std::vector<Stream> accept_streams(const AcceptOptions& options, Seconds timeout);

 private:
  Listener(Socket socket, std::uint16_t port) : socket_(std::move(socket)), port_(port) {}
  Socket socket_;
  std::uint16_t port_ = 0;
};

std::vector<Stream> listen_accept_streams(const Endpoint& bind, PathTag expected_path,
                                          std::size_t expected_count, Seconds timeout);

std::vector<Stream> connect_streams(const Endpoint& target, PathTag path_id, std::size_t count,
                                    Seconds timeout);

/// Writes all of `data` in slices of at most `chunk_size`, pacing between
/// slices when the stream has a pacing rate. Returns bytes sent.
std::size_t send_chunked(Stream& stream, ByteView data, std::size_t chunk_size);

/// Reads exactly into.size() bytes. Throws Error(truncated) with the count
/// received if the peer closes first.
void recv_exact(Stream& stream, MutableByteView into);

/// Reads whatever is available (at least one byte). Returns 0 at end of stream.
std::size_t recv_some(Stream& stream, MutableByteView into);

/// Time that `bytes` occupy at `rate` bytes per second.
Seconds pacing_delay(std::uint64_t bytes, std::uint64_t rate);

/// Requests send and receive buffers of `window` bytes; returns what the OS granted.
std::size_t apply_window(Stream& stream, std::size_t window);

}  // namespace mpw
