#include "mpw/library.hpp"

#include <algorithm>
#include <cstring>
#include <exception>
#include <functional>
#include <string>
#include <thread>

#include "mpw/autotune.hpp"
#include "mpw/error.hpp"

namespace mpw {

namespace detail {

struct PathState {
  PathId id = 0;
  PathConfig config;
  std::vector<Stream> streams;
  std::atomic<bool> busy{false};
  std::atomic<bool> failed{false};
  std::atomic<bool> closed{false};
  std::unique_ptr<std::byte[]> cache;
  std::size_t cache_capacity = 0;
  mutable std::mutex config_mutex;

  void shutdown() const noexcept {
    for (const auto& s : streams) s.shutdown();
  }

  void fail() noexcept {
    failed = true;
    shutdown();
  }

  std::size_t chunk_size() const {
    std::lock_guard lock(config_mutex);
    return config.chunk_size;
  }
};

struct HandleState {
  PathId path = 0;
  std::atomic<TransferState> state{TransferState::in_flight};
  MessageBuffer result;
  Errc error_code = Errc::transfer_failed;
  std::string error;
  std::thread worker;

  ~HandleState() {
    if (worker.joinable()) worker.join();
  }
};

}  // namespace detail

namespace {

using detail::PathState;

std::string path_prefix(const PathState& s) { return "path " + std::to_string(s.id) + ": "; }

/// Marks a path busy for the lifetime of one logical transfer.
class BusyGuard {
 public:
  explicit BusyGuard(PathState& state) {
    bool expected = false;
    if (!state.busy.compare_exchange_strong(expected, true))
      throw Error(Errc::busy, path_prefix(state) + "another transfer is in progress");
    state_ = &state;
  }
  BusyGuard(BusyGuard&& other) noexcept : state_(std::exchange(other.state_, nullptr)) {}
  BusyGuard& operator=(BusyGuard&&) = delete;
  ~BusyGuard() {
    if (state_) state_->busy = false;
  }

 private:
  PathState* state_ = nullptr;
};

void check_usable(const PathState& s) {
  if (s.closed) throw Error(Errc::no_such_path, "no such path " + std::to_string(s.id));
  if (s.failed) throw Error(Errc::closed, path_prefix(s) + "path has failed");
}

/// Sentinel thrown by a coordinating task whose nested tasks already failed.
struct Aborted {};

/// Runs per-stream tasks concurrently. The first failure is kept, its path is
/// shut down so sibling tasks blocked on that path wake up, and later
/// (consequential) failures are dropped.
class TaskGroup {
 public:
  struct Task {
    PathState* path;
    std::function<void()> fn;
  };

  void run(std::vector<Task>& tasks) {
    if (tasks.empty()) return;
    if (tasks.size() == 1) {
      execute(tasks[0]);
      return;
    }
    std::vector<std::thread> threads;
    threads.reserve(tasks.size() - 1);
    try {
      for (std::size_t i = 1; i < tasks.size(); ++i) threads.emplace_back([this, &tasks, i] { execute(tasks[i]); });
    } catch (...) {
      record(std::current_exception(), tasks[0].path);
    }
    if (threads.size() == tasks.size() - 1) execute(tasks[0]);
    for (auto& t : threads) t.join();
  }

  bool failed() const {
    std::lock_guard lock(mutex_);
    return static_cast<bool>(first_);
  }

  void rethrow() const {
    std::lock_guard lock(mutex_);
    if (first_) std::rethrow_exception(first_);
  }

 private:
  void execute(Task& task) {
    try {
      task.fn();
    } catch (const Aborted&) {
    } catch (...) {
      record(std::current_exception(), task.path);
    }
  }

  void record(std::exception_ptr error, PathState* path) {
    {
      std::lock_guard lock(mutex_);
      if (!first_) first_ = annotate(error, path);
    }
    if (path) path->fail();
  }

  static std::exception_ptr annotate(std::exception_ptr error, PathState* path) {
    if (!path) return error;
    try {
      std::rethrow_exception(error);
    } catch (const Error& e) {
      return std::make_exception_ptr(Error(e.code(), path_prefix(*path) + e.what(), e.bytes()));
    } catch (const std::exception& e) {
      return std::make_exception_ptr(Error(Errc::transport, path_prefix(*path) + e.what()));
    } catch (...) {
      return error;
    }
  }

  mutable std::mutex mutex_;
  std::exception_ptr first_;
};

void add_send_tasks(std::vector<TaskGroup::Task>& tasks, PathState& state, ByteView data,
                    const MessageBuffer* header) {
  const auto plan = stripe(data.size(), state.streams.size());
  const auto chunk = state.chunk_size();
  std::size_t offset = 0;
  for (std::size_t i = 0; i < plan.segment_lengths.size(); ++i) {
    auto segment = data.subspan(offset, plan.segment_lengths[i]);
    offset += segment.size();
    bool with_header = header && i == 0;
    if (segment.empty() && !with_header) continue;
    tasks.push_back({&state, [&state, segment, chunk, header, with_header, i] {
                       if (with_header) send_chunked(state.streams[i], *header, header->size());
                       send_chunked(state.streams[i], segment, chunk);
                     }});
  }
}

void add_recv_tasks(std::vector<TaskGroup::Task>& tasks, PathState& state, MutableByteView into) {
  const auto plan = stripe(into.size(), state.streams.size());
  std::size_t offset = 0;
  for (std::size_t i = 0; i < plan.segment_lengths.size(); ++i) {
    auto segment = into.subspan(offset, plan.segment_lengths[i]);
    offset += segment.size();
    if (segment.empty()) continue;
    tasks.push_back({&state, [&state, segment, i] { recv_exact(state.streams[i], segment); }});
  }
}

MessageBuffer dynamic_header(std::uint64_t length) {
  MessageBuffer header(kDynamicHeaderSize);
  store_be<std::uint64_t>(header.data(), length);
  return header;
}

/// Reads the length prefix, grows the path cache, and receives the striped
/// payload into it. Runs nested tasks on `group`.
std::size_t receive_dynamic(TaskGroup& group, PathState& state) {
  std::byte raw[kDynamicHeaderSize];
  recv_exact(state.streams[0], raw);
  auto length = load_be<std::uint64_t>(raw);
  std::uint64_t cap;
  {
    std::lock_guard lock(state.config_mutex);
    cap = state.config.max_dynamic_size;
  }
  if (length > cap)
    throw Error(Errc::oversize, "peer advertised " + std::to_string(length) + " bytes, limit is " +
                                    std::to_string(cap));
  if (length > state.cache_capacity) {
    std::size_t capacity = std::max<std::size_t>(state.cache_capacity, 1);
    while (capacity < length) capacity *= 2;
    state.cache = std::make_unique_for_overwrite<std::byte[]>(capacity);
    state.cache_capacity = capacity;
  }
  std::vector<TaskGroup::Task> tasks;
  add_recv_tasks(tasks, state, MutableByteView(state.cache.get(), static_cast<std::size_t>(length)));
  group.run(tasks);
  if (group.failed()) throw Aborted{};
  return static_cast<std::size_t>(length);
}

}  // namespace

Library::Library() = default;

Library::~Library() { finalize(); }

void Library::init() {
  std::lock_guard lock(mutex_);
  initialized_ = true;
}

Library::PathPtr Library::lookup(PathId path) const {
  std::lock_guard lock(mutex_);
  auto it = paths_.find(path);
  if (it == paths_.end()) throw Error(Errc::no_such_path, "no such path " + std::to_string(path));
  return it->second;
}

PathId Library::register_path(std::vector<Stream> streams, PathConfig config, PathId id) {
  auto state = std::make_shared<PathState>();
  state->id = id;
  config.stream_count = streams.size();
  state->config = config;
  state->streams = std::move(streams);
  for (auto& s : state->streams) {
    s.set_pacing_rate(config.pacing_rate);
    if (config.window) apply_window(s, *config.window);
  }
  {
    std::lock_guard lock(mutex_);
    if (!initialized_) throw Error(Errc::not_initialized, "library was finalized; call init()");
    paths_.emplace(id, state);
  }
  if (config.autotune) {
    try {
      autotune_path(*this, id);
    } catch (...) {
      retire(state);
      throw;
    }
  }
  return id;
}

void Library::retire(const PathPtr& state) {
  {
    std::lock_guard lock(mutex_);
    auto it = paths_.find(state->id);
    if (it != paths_.end() && it->second == state) paths_.erase(it);
  }
  state->closed = true;
  state->shutdown();
}

PathId Library::create_path(const Endpoint& remote, std::size_t streams, Role role, PathConfig base,
                            Seconds timeout) {
  base.stream_count = streams;
  base.validate();
  {
    std::lock_guard lock(mutex_);
    if (!initialized_) throw Error(Errc::not_initialized, "library was finalized; call init()");
  }
  if (role == Role::server) {
    auto listener = Listener::bind(remote);
    return accept_path(listener, streams, base, timeout);
  }

  validate(remote);
  const PathId id = next_path_++;
  const auto deadline = Clock::now() + std::chrono::duration_cast<Clock::duration>(timeout);
  for (;;) {
    try {
      Seconds left = deadline - Clock::now();
      auto connected = connect_streams(remote, id, streams, std::max(left, Seconds(0.001)));
      return register_path(std::move(connected), base, id);
    } catch (const Error& e) {
      if (e.code() != Errc::connect_failed || Clock::now() >= deadline) throw;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
}

PathId Library::accept_path(Listener& listener, std::size_t streams, PathConfig base, Seconds timeout) {
  base.stream_count = streams;
  base.validate();
  auto accepted = listener.accept_streams({std::nullopt, static_cast<std::uint16_t>(streams)}, timeout);
  return register_path(std::move(accepted), base, next_path_++);
}

PathId Library::accept_path_any(Listener& listener, PathConfig base, Seconds timeout) {
  auto accepted = listener.accept_streams({}, timeout);
  base.stream_count = accepted.size();
  base.validate();
  return register_path(std::move(accepted), base, next_path_++);
}

void Library::destroy_path(PathId path) { retire(lookup(path)); }

bool Library::is_open(PathId path) const {
  std::lock_guard lock(mutex_);
  auto it = paths_.find(path);
  return it != paths_.end() && !it->second->failed;
}

std::vector<PathId> Library::paths() const {
  std::lock_guard lock(mutex_);
  std::vector<PathId> ids;
  for (const auto& [id, state] : paths_) ids.push_back(id);
  return ids;
}

PathConfig Library::config(PathId path) const {
  auto state = lookup(path);
  std::lock_guard lock(state->config_mutex);
  return state->config;
}

std::vector<StreamStats> Library::stream_stats(PathId path) const {
  auto state = lookup(path);
  std::vector<StreamStats> stats;
  for (const auto& s : state->streams) stats.push_back(s.stats());
  return stats;
}

std::vector<std::optional<std::size_t>> Library::granted_windows(PathId path) const {
  auto state = lookup(path);
  std::vector<std::optional<std::size_t>> windows;
  for (const auto& s : state->streams) windows.push_back(s.window_bytes());
  return windows;
}

std::size_t Library::dynamic_cache_capacity(PathId path) const { return lookup(path)->cache_capacity; }

void Library::send_impl(PathState& state, ByteView data) {
  TaskGroup group;
  std::vector<TaskGroup::Task> tasks;
  add_send_tasks(tasks, state, data, nullptr);
  group.run(tasks);
  group.rethrow();
}

void Library::recv_impl(PathState& state, MutableByteView into) {
  TaskGroup group;
  std::vector<TaskGroup::Task> tasks;
  add_recv_tasks(tasks, state, into);
  group.run(tasks);
  group.rethrow();
}

MessageBuffer Library::send_recv_impl(PathState& state, ByteView out, std::size_t expected_in) {
  MessageBuffer in(expected_in);
  TaskGroup group;
  std::vector<TaskGroup::Task> tasks;
  add_send_tasks(tasks, state, out, nullptr);
  add_recv_tasks(tasks, state, in);
  group.run(tasks);
  group.rethrow();
  return in;
}

MessageBuffer Library::dsend_recv_impl(PathState& send_state, PathState& recv_state, ByteView out) {
  const auto header = dynamic_header(out.size());
  TaskGroup group;
  std::vector<TaskGroup::Task> tasks;
  add_send_tasks(tasks, send_state, out, &header);
  std::size_t received = 0;
  tasks.push_back({&recv_state, [&] { received = receive_dynamic(group, recv_state); }});
  group.run(tasks);
  try {
    group.rethrow();
  } catch (const Error& e) {
    if (e.code() == Errc::oversize) {
      PathPtr doomed;
      {
        std::lock_guard lock(mutex_);
        if (auto it = paths_.find(recv_state.id); it != paths_.end()) doomed = it->second;
      }
      if (doomed) retire(doomed);
    }
    throw;
  }
  return MessageBuffer(recv_state.cache.get(), recv_state.cache.get() + received);
}

void Library::send(PathId path, ByteView data) {
  auto state = lookup(path);
  check_usable(*state);
  BusyGuard guard(*state);
  send_impl(*state, data);
}

MessageBuffer Library::recv(PathId path, std::size_t expected_len) {
  auto state = lookup(path);
  check_usable(*state);
  BusyGuard guard(*state);
  MessageBuffer in(expected_len);
  recv_impl(*state, in);
  return in;
}

MessageBuffer Library::send_recv(PathId path, ByteView out, std::size_t expected_in) {
  auto state = lookup(path);
  check_usable(*state);
  BusyGuard guard(*state);
  return send_recv_impl(*state, out, expected_in);
}

MessageBuffer Library::dsend_recv(PathId path, ByteView out) {
  auto state = lookup(path);
  check_usable(*state);
  BusyGuard guard(*state);
  return dsend_recv_impl(*state, *state, out);
}

void Library::barrier(PathId path) {
  auto state = lookup(path);
  check_usable(*state);
  BusyGuard guard(*state);
  std::byte token[8];
  store_be<std::uint64_t>(token, kBarrierToken);
  try {
    send_chunked(state->streams[0], token, sizeof token);
    std::byte reply[8];
    recv_exact(state->streams[0], reply);
    if (load_be<std::uint64_t>(reply) != kBarrierToken)
      throw Error(Errc::protocol, "unexpected barrier token");
  } catch (const Error& e) {
    state->fail();
    throw Error(Errc::barrier, path_prefix(*state) + "barrier: " + e.what(), e.bytes());
  }
}

MessageBuffer Library::cycle(PathId recv_path, PathId send_path, ByteView out, std::size_t expected_in) {
  if (recv_path == send_path) throw Error(Errc::precondition, "cycle needs two distinct paths");
  auto rs = lookup(recv_path);
  auto ss = lookup(send_path);
  check_usable(*rs);
  check_usable(*ss);
  BusyGuard rguard(*rs);
  BusyGuard sguard(*ss);
  MessageBuffer in(expected_in);
  TaskGroup group;
  std::vector<TaskGroup::Task> tasks;
  add_send_tasks(tasks, *ss, out, nullptr);
  add_recv_tasks(tasks, *rs, in);
  group.run(tasks);
  group.rethrow();
  return in;
}

MessageBuffer Library::dcycle(PathId recv_path, PathId send_path, ByteView out) {
  if (recv_path == send_path) throw Error(Errc::precondition, "dcycle needs two distinct paths");
  auto rs = lookup(recv_path);
  auto ss = lookup(send_path);
  check_usable(*rs);
  check_usable(*ss);
  BusyGuard rguard(*rs);
  BusyGuard sguard(*ss);
  return dsend_recv_impl(*ss, *rs, out);
}

void Library::relay(PathId a, PathId b) {
  if (a == b) throw Error(Errc::precondition, "relay needs two distinct paths");
  auto sa = lookup(a);
  auto sb = lookup(b);
  check_usable(*sa);
  check_usable(*sb);
  if (sa->streams.size() != sb->streams.size())
    throw Error(Errc::precondition, "relay needs equal stream counts (" + std::to_string(sa->streams.size()) +
                                        " vs " + std::to_string(sb->streams.size()) + ")");
  BusyGuard ga(*sa);
  BusyGuard gb(*sb);

  const std::size_t n = sa->streams.size();
  std::atomic<std::size_t> eof_a{0}, eof_b{0};
  std::atomic<bool> stopping{false};
  std::mutex error_mutex;
  std::optional<Error> failure;

  auto terminate = [&] {
    if (!stopping.exchange(true)) {
      sa->shutdown();
      sb->shutdown();
    }
  };

  auto pump = [&](PathState& from, PathState& to, std::size_t i, std::atomic<std::size_t>& eofs) {
    MessageBuffer buffer(256 * KiB);
    try {
      for (;;) {
        auto got = recv_some(from.streams[i], buffer);
        if (got == 0) {
          to.streams[i].shutdown_write();
          if (++eofs == n) terminate();
          return;
        }
        send_chunked(to.streams[i], ByteView(buffer.data(), got), to.chunk_size());
      }
    } catch (const Error& e) {
      if (!stopping) {
        std::lock_guard lock(error_mutex);
        if (!failure) failure.emplace(Errc::transport, path_prefix(from) + "relay: " + e.what(), e.bytes());
      }
      terminate();
    }
  };

  std::vector<std::thread> threads;
  threads.reserve(2 * n);
  try {
    for (std::size_t i = 0; i < n; ++i) {
      threads.emplace_back(pump, std::ref(*sa), std::ref(*sb), i, std::ref(eof_a));
      threads.emplace_back(pump, std::ref(*sb), std::ref(*sa), i, std::ref(eof_b));
    }
  } catch (...) {
    terminate();
  }
  for (auto& t : threads) t.join();
  retire(sa);
  retire(sb);
  if (failure) throw *failure;
}

HandleId Library::isend_recv(PathId path, MessageBuffer out, std::size_t expected_in) {
  auto state = lookup(path);
  check_usable(*state);
  BusyGuard guard(*state);
  auto handle = std::make_shared<detail::HandleState>();
  handle->path = path;
  const HandleId id = next_handle_++;
  {
    std::lock_guard lock(mutex_);
    handles_.emplace(id, handle);
  }
  handle->worker = std::thread(
      [this, state, handle, guard = std::move(guard), out = std::move(out), expected_in]() mutable {
        try {
          handle->result = send_recv_impl(*state, out, expected_in);
          handle->state.store(TransferState::finished, std::memory_order_release);
        } catch (const Error& e) {
          handle->error_code = e.code();
          handle->error = e.what();
          handle->state.store(TransferState::failed, std::memory_order_release);
        } catch (const std::exception& e) {
          handle->error = e.what();
          handle->state.store(TransferState::failed, std::memory_order_release);
        }
      });
  return id;
}

bool Library::has_finished(HandleId handle) const {
  std::lock_guard lock(mutex_);
  auto it = handles_.find(handle);
  if (it == handles_.end()) {
    if (consumed_handles_.contains(handle)) return true;
    throw Error(Errc::no_such_handle, "no such handle " + std::to_string(handle));
  }
  return it->second->state.load(std::memory_order_acquire) != TransferState::in_flight;
}

MessageBuffer Library::wait(HandleId handle) {
  std::shared_ptr<detail::HandleState> state;
  {
    std::lock_guard lock(mutex_);
    auto it = handles_.find(handle);
    if (it == handles_.end()) {
      if (consumed_handles_.contains(handle))
        throw Error(Errc::no_such_handle, "handle " + std::to_string(handle) + " was already waited on");
      throw Error(Errc::no_such_handle, "no such handle " + std::to_string(handle));
    }
    state = std::move(it->second);
    handles_.erase(it);
    consumed_handles_.insert(handle);
  }
  if (state->worker.joinable()) state->worker.join();
  if (state->state.load(std::memory_order_acquire) == TransferState::failed)
    throw Error(Errc::transfer_failed, "non-blocking transfer failed: " + state->error);
  return std::move(state->result);
}

void Library::configure(PathId path, Setting setting, std::uint64_t value) {
  switch (setting) {
    case Setting::chunk_size: return set_chunk_size(path, static_cast<std::size_t>(value));
    case Setting::pacing_rate: return set_pacing_rate(path, value);
    case Setting::window: return set_window(path, static_cast<std::size_t>(value));
    case Setting::autotune:
      if (value > 1) throw Error(Errc::range, "autotune takes 0 or 1");
      return set_autotuning(path, value == 1);
  }
}

void Library::set_chunk_size(PathId path, std::size_t bytes) {
  auto state = lookup(path);
  check_usable(*state);
  if (bytes == 0) throw Error(Errc::range, "chunk size must be > 0");
  BusyGuard guard(*state);
  std::lock_guard lock(state->config_mutex);
  state->config.chunk_size = bytes;
}

void Library::set_pacing_rate(PathId path, std::optional<std::uint64_t> bytes_per_second) {
  auto state = lookup(path);
  check_usable(*state);
  if (bytes_per_second && *bytes_per_second == 0) throw Error(Errc::range, "pacing rate must be > 0");
  BusyGuard guard(*state);
  for (auto& s : state->streams) s.set_pacing_rate(bytes_per_second);
  std::lock_guard lock(state->config_mutex);
  state->config.pacing_rate = bytes_per_second;
}

void Library::set_window(PathId path, std::size_t bytes) {
  auto state = lookup(path);
  check_usable(*state);
  if (bytes == 0) throw Error(Errc::range, "window must be > 0");
  BusyGuard guard(*state);
  for (auto& s : state->streams) apply_window(s, bytes);
  std::lock_guard lock(state->config_mutex);
  state->config.window = bytes;
}

void Library::set_autotuning(PathId path, bool enabled) {
  auto state = lookup(path);
  check_usable(*state);
  std::lock_guard lock(state->config_mutex);
  state->config.autotune = enabled;
}

void Library::finalize() {
  std::map<PathId, PathPtr> paths;
  std::map<HandleId, std::shared_ptr<detail::HandleState>> handles;
  {
    std::lock_guard lock(mutex_);
    paths.swap(paths_);
    handles.swap(handles_);
    consumed_handles_.clear();
    initialized_ = false;
  }
  for (auto& [id, state] : paths) {
    state->closed = true;
    state->shutdown();
  }
  for (auto& [id, handle] : handles)
    if (handle->worker.joinable()) handle->worker.join();
}

Library& default_library() {
  static Library instance;
  return instance;
}

}  // namespace mpw
