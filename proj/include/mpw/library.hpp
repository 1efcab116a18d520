#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <vector>

#include "mpw/bytes.hpp"
#include "mpw/endpoint.hpp"
#include "mpw/path.hpp"
#include "mpw/stream.hpp"

namespace mpw {

using HandleId = std::uint64_t;

enum class Role { server, client };
enum class Setting { chunk_size, pacing_rate, window, autotune };
enum class TransferState { in_flight, finished, failed };

inline constexpr Seconds kDefaultConnectTimeout{10.0};

/// Barrier token, "MPWBBAR1".
inline constexpr std::uint64_t kBarrierToken = 0x4D50574242415231ULL;
inline constexpr std::size_t kDynamicHeaderSize = 8;

namespace detail {
struct PathState;
struct HandleState;
}  // namespace detail

/// Owns every path and non-blocking transfer of one process (or one isolated
/// context within it). All members are safe to call concurrently; a single
/// path carries at most one transfer at a time and reports Error(busy)
/// otherwise.
class Library {
 public:
  Library();
  ~Library();
  Library(const Library&) = delete;
  Library& operator=(const Library&) = delete;

  /// Re-arms the library after finalize(). Constructing a Library initializes it.
  void init();

  /// Client role connects `streams` streams to `remote`; server role binds
  /// `remote` and waits for a client. Both ends run the autotuner when
  /// `base.autotune` is set, so the two sides must agree on it.
  PathId create_path(const Endpoint& remote, std::size_t streams, Role role, PathConfig base = {},
                     Seconds timeout = kDefaultConnectTimeout);
  /// Server role on an already bound listener.
  PathId accept_path(Listener& listener, std::size_t streams, PathConfig base = {},
                     Seconds timeout = kDefaultConnectTimeout);
  /// Like accept_path, but takes the stream count from the first arriving handshake.
  PathId accept_path_any(Listener& listener, PathConfig base = {}, Seconds timeout = kDefaultConnectTimeout);

  void destroy_path(PathId path);

  bool is_open(PathId path) const;
  std::vector<PathId> paths() const;
  PathConfig config(PathId path) const;
  std::vector<StreamStats> stream_stats(PathId path) const;
  std::vector<std::optional<std::size_t>> granted_windows(PathId path) const;
  std::size_t dynamic_cache_capacity(PathId path) const;

  void send(PathId path, ByteView data);
  MessageBuffer recv(PathId path, std::size_t expected_len);
  MessageBuffer send_recv(PathId path, ByteView out, std::size_t expected_in);
  /// Length-prefixed exchange; neither side needs to know the other's size.
  MessageBuffer dsend_recv(PathId path, ByteView out);
  void barrier(PathId path);
  MessageBuffer cycle(PathId recv_path, PathId send_path, ByteView out, std::size_t expected_in);
  MessageBuffer dcycle(PathId recv_path, PathId send_path, ByteView out);
  /// Pumps stream i of `a` to stream i of `b` and back until either path
  /// closes, then destroys both.
  void relay(PathId a, PathId b);

  HandleId isend_recv(PathId path, MessageBuffer out, std::size_t expected_in);
  /// True once the transfer finished or failed; stays true after wait().
  bool has_finished(HandleId handle) const;
  /// Blocks until done and consumes the handle; a second wait is an error.
  MessageBuffer wait(HandleId handle);

  void configure(PathId path, Setting setting, std::uint64_t value);
  void set_chunk_size(PathId path, std::size_t bytes);
  /// nullopt turns pacing off.
  void set_pacing_rate(PathId path, std::optional<std::uint64_t> bytes_per_second);
  void set_window(PathId path, std::size_t bytes);
  void set_autotuning(PathId path, bool enabled);

  /// Destroys all paths, waits for background transfers, and drops cached buffers.
  void finalize();

 private:
  using PathPtr = std::shared_ptr<detail::PathState>;

  PathPtr lookup(PathId path) const;
  PathId register_path(std::vector<Stream> streams, PathConfig config, PathId id);
  void retire(const PathPtr& state);

  void send_impl(detail::PathState& state, ByteView data);
  void recv_impl(detail::PathState& state, MutableByteView into);
  MessageBuffer send_recv_impl(detail::PathState& state, ByteView out, std::size_t expected_in);
  MessageBuffer dsend_recv_impl(detail::PathState& send_state, detail::PathState& recv_state, ByteView out);

  mutable std::mutex mutex_;
  bool initialized_ = true;
  std::atomic<PathId> next_path_{1};
  std::atomic<HandleId> next_handle_{1};
  std::map<PathId, PathPtr> paths_;
  std::map<HandleId, std::shared_ptr<detail::HandleState>> handles_;
  std::set<HandleId> consumed_handles_;
};

/// Process-wide instance used by the C interface and the tools.
Library& default_library();

}  // namespace mpw
