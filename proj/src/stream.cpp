#include "mpw/stream.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <map>
#include <thread>

#include "mpw/error.hpp"

namespace mpw {

namespace {

std::string errno_text(const char* what) { return std::string(what) + ": " + std::strerror(errno); }

void set_nonblocking(int fd, bool on) {
  int flags = ::fcntl(fd, F_GETFL, 0);
  ::fcntl(fd, F_SETFL, on ? (flags | O_NONBLOCK) : (flags & ~O_NONBLOCK));
}

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

int remaining_ms(Clock::time_point deadline) {
  auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
  return left < 0 ? 0 : static_cast<int>(std::min<long long>(left, 1'000'000));
}

Clock::time_point deadline_after(Seconds timeout) {
  return Clock::now() + std::chrono::duration_cast<Clock::duration>(timeout);
}

sockaddr_in make_addr(const std::string& dotted, std::uint16_t port) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, dotted.c_str(), &addr.sin_addr) != 1)
    throw Error(Errc::unresolvable_host, "not an IPv4 address: " + dotted);
  return addr;
}

Socket connect_one(const sockaddr_in& addr, Clock::time_point deadline) {
  Socket sock(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
  if (!sock) throw Error(Errc::connect_failed, errno_text("socket"));
  set_nonblocking(sock.fd(), true);
  if (::connect(sock.fd(), reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0) {
    if (errno != EINPROGRESS) throw Error(Errc::connect_failed, errno_text("connect"));
    pollfd pfd{sock.fd(), POLLOUT, 0};
    int rc = ::poll(&pfd, 1, remaining_ms(deadline));
    if (rc == 0) throw Error(Errc::connect_failed, "connect timed out");
    if (rc < 0) throw Error(Errc::connect_failed, errno_text("poll"));
    int err = 0;
    socklen_t len = sizeof err;
    ::getsockopt(sock.fd(), SOL_SOCKET, SO_ERROR, &err, &len);
    if (err != 0) throw Error(Errc::connect_failed, std::string("connect: ") + std::strerror(err));
  }
  set_nonblocking(sock.fd(), false);
  set_nodelay(sock.fd());
  return sock;
}

void write_all(int fd, ByteView data) {
  std::size_t done = 0;
  while (done < data.size()) {
    ssize_t n = ::send(fd, data.data() + done, data.size() - done, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(Errc::transport, errno_text("send"), done);
    }
    done += static_cast<std::size_t>(n);
  }
}

}  // namespace

std::array<std::byte, StreamHandshake::kWireSize> StreamHandshake::encode() const {
  std::array<std::byte, kWireSize> wire{};
  std::copy(kMagic.begin(), kMagic.end(), wire.begin());
  wire[4] = std::byte{kVersion};
  store_be<std::uint32_t>(wire.data() + 5, path_id);
  store_be<std::uint16_t>(wire.data() + 9, stream_index);
  store_be<std::uint16_t>(wire.data() + 11, stream_count);
  return wire;
}

StreamHandshake StreamHandshake::decode(ByteView wire) {
  if (wire.size() != kWireSize) throw Error(Errc::protocol, "handshake must be 13 bytes");
  if (!std::equal(kMagic.begin(), kMagic.end(), wire.begin()))
    throw Error(Errc::protocol, "bad handshake magic");
  if (wire[4] != std::byte{kVersion}) throw Error(Errc::protocol, "unsupported handshake version");
  StreamHandshake hs;
  hs.path_id = load_be<std::uint32_t>(wire.data() + 5);
  hs.stream_index = load_be<std::uint16_t>(wire.data() + 9);
  hs.stream_count = load_be<std::uint16_t>(wire.data() + 11);
  if (hs.stream_count < 1 || hs.stream_count > kMaxStreams || hs.stream_index >= hs.stream_count)
    throw Error(Errc::protocol, "handshake stream index/count out of range");
  return hs;
}

Stream::Stream(Socket socket, StreamHandshake handshake)
    : socket_(std::move(socket)), handshake_(handshake) {}

void Stream::set_pacing_rate(std::optional<std::uint64_t> bytes_per_second) {
  if (bytes_per_second && *bytes_per_second == 0) throw Error(Errc::range, "pacing rate must be > 0");
  pacing_rate_ = bytes_per_second;
}

std::string resolve_host(std::string_view name) {
  if (name.empty()) throw Error(Errc::unresolvable_host, "empty host name");
  std::string host(name);
  in_addr probe{};
  if (::inet_pton(AF_INET, host.c_str(), &probe) == 1) return host;

  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* result = nullptr;
  int rc = ::getaddrinfo(host.c_str(), nullptr, &hints, &result);
  if (rc != 0 || result == nullptr)
    throw Error(Errc::unresolvable_host, "cannot resolve '" + host + "': " + ::gai_strerror(rc));
  char text[INET_ADDRSTRLEN] = {};
  ::inet_ntop(AF_INET, &reinterpret_cast<sockaddr_in*>(result->ai_addr)->sin_addr, text, sizeof text);
  ::freeaddrinfo(result);
  return text;
}

Listener Listener::bind(const Endpoint& where) {
  validate(where, /*allow_ephemeral=*/true);
  auto addr = make_addr(resolve_host(where.host), where.port);
  Socket sock(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
  if (!sock) throw Error(Errc::io, errno_text("socket"));
  int one = 1;
  ::setsockopt(sock.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  if (::bind(sock.fd(), reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0)
    throw Error(Errc::io, errno_text(("bind " + where.to_string()).c_str()));
  if (::listen(sock.fd(), SOMAXCONN) != 0) throw Error(Errc::io, errno_text("listen"));
  set_nonblocking(sock.fd(), true);
  sockaddr_in bound{};
  socklen_t len = sizeof bound;
  ::getsockname(sock.fd(), reinterpret_cast<sockaddr*>(&bound), &len);
  return Listener(std::move(sock), ntohs(bound.sin_port));
}

std::vector<Stream> Listener::accept_streams(const AcceptOptions& options, Seconds timeout) {
  if (options.stream_count && (*options.stream_count < 1 || *options.stream_count > kMaxStreams))
    throw Error(Errc::precondition, "stream count must be in [1, 256]");

  struct Pending {
    Socket sock;
    std::array<std::byte, StreamHandshake::kWireSize> buf{};
    std::size_t got = 0;
  };
  std::vector<Pending> pending;
  std::map<std::uint16_t, Stream> arrived;
  std::optional<PathTag> path_id = options.path_id;
  std::optional<std::uint16_t> count = options.stream_count;
  auto deadline = deadline_after(timeout);

  while (!count || arrived.size() < *count) {
    std::vector<pollfd> fds;
    fds.push_back({socket_.fd(), POLLIN, 0});
    for (auto& p : pending) fds.push_back({p.sock.fd(), POLLIN, 0});
    int rc = ::poll(fds.data(), fds.size(), remaining_ms(deadline));
    if (rc < 0 && errno != EINTR) throw Error(Errc::io, errno_text("poll"));
    if (rc == 0 && Clock::now() >= deadline)
      throw Error(Errc::timeout, "timed out waiting for streams (" + std::to_string(arrived.size()) + " of " +
                                     (count ? std::to_string(*count) : std::string("?")) + " arrived)");

    // Handshake bytes on pending connections. Iterate backwards so erase is safe.
    for (std::size_t i = pending.size(); i-- > 0;) {
      if (!(fds[i + 1].revents & (POLLIN | POLLHUP | POLLERR))) continue;
      auto& p = pending[i];
      ssize_t n = ::recv(p.sock.fd(), p.buf.data() + p.got, p.buf.size() - p.got, MSG_DONTWAIT);
      if (n < 0 && (errno == EAGAIN || errno == EINTR)) continue;
      if (n <= 0) {
        pending.erase(pending.begin() + static_cast<std::ptrdiff_t>(i));
        continue;
      }
      p.got += static_cast<std::size_t>(n);
      if (p.got < p.buf.size()) continue;

      std::optional<StreamHandshake> hs;
      try {
        hs = StreamHandshake::decode(p.buf);
      } catch (const Error&) {
      }
      bool ok = hs && (!path_id || hs->path_id == *path_id) && (!count || hs->stream_count == *count);
      if (ok) {
        if (arrived.contains(hs->stream_index))
          throw Error(Errc::protocol, "duplicate stream index " + std::to_string(hs->stream_index));
        path_id = hs->path_id;
        count = hs->stream_count;
        set_nodelay(p.sock.fd());
        arrived.emplace(hs->stream_index, Stream(std::move(p.sock), *hs));
      }
      pending.erase(pending.begin() + static_cast<std::ptrdiff_t>(i));
    }

    if (fds[0].revents & POLLIN) {
      for (;;) {
        int fd = ::accept4(socket_.fd(), nullptr, nullptr, SOCK_CLOEXEC);
        if (fd < 0) break;
        pending.push_back(Pending{Socket(fd)});
      }
    }
  }

  std::vector<Stream> streams;
  streams.reserve(arrived.size());
  for (auto& [index, stream] : arrived) streams.push_back(std::move(stream));
  return streams;
}

std::vector<Stream> listen_accept_streams(const Endpoint& bind, PathTag expected_path,
                                          std::size_t expected_count, Seconds timeout) {
  if (expected_count < 1 || expected_count > kMaxStreams)
    throw Error(Errc::precondition, "stream count must be in [1, 256]");
  auto listener = Listener::bind(bind);
  return listener.accept_streams({expected_path, static_cast<std::uint16_t>(expected_count)}, timeout);
}

std::vector<Stream> connect_streams(const Endpoint& target, PathTag path_id, std::size_t count,
                                    Seconds timeout) {
  if (count < 1 || count > kMaxStreams) throw Error(Errc::precondition, "stream count must be in [1, 256]");
  validate(target);
  auto addr = make_addr(resolve_host(target.host), target.port);
  auto deadline = deadline_after(timeout);
  std::vector<Stream> streams;
  streams.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    StreamHandshake hs{path_id, static_cast<std::uint16_t>(i), static_cast<std::uint16_t>(count)};
    Socket sock = connect_one(addr, deadline);
    auto wire = hs.encode();
    try {
      write_all(sock.fd(), wire);
    } catch (const Error& e) {
      throw Error(Errc::connect_failed, std::string("handshake: ") + e.what());
    }
    streams.emplace_back(std::move(sock), hs);
  }
  return streams;
}

Seconds pacing_delay(std::uint64_t bytes, std::uint64_t rate) {
  if (rate == 0) throw Error(Errc::range, "pacing rate must be > 0");
  return Seconds(static_cast<double>(bytes) / static_cast<double>(rate));
}

std::size_t send_chunked(Stream& stream, ByteView data, std::size_t chunk_size) {
  if (chunk_size == 0) throw Error(Errc::range, "chunk size must be > 0");
  if (!stream.is_open()) throw Error(Errc::closed, "send on closed stream");
  auto start = Clock::now();
  std::size_t sent = 0;
  while (sent < data.size()) {
    auto slice = data.subspan(sent, std::min(chunk_size, data.size() - sent));
    try {
      write_all(stream.fd(), slice);
    } catch (const Error& e) {
      stream.stats_.bytes_sent += sent + e.bytes();
      throw Error(Errc::transport, e.what(), sent + e.bytes());
    }
    sent += slice.size();
    ++stream.stats_.chunk_writes;
    stream.stats_.largest_chunk = std::max(stream.stats_.largest_chunk, slice.size());
    if (stream.on_chunk) stream.on_chunk(slice.size());
    if (stream.pacing_rate_) {
      auto due = start + std::chrono::duration_cast<Clock::duration>(pacing_delay(sent, *stream.pacing_rate_));
      std::this_thread::sleep_until(due);
    }
  }
  stream.stats_.bytes_sent += sent;
  return sent;
}

std::size_t recv_some(Stream& stream, MutableByteView into) {
  if (!stream.is_open()) throw Error(Errc::closed, "receive on closed stream");
  if (into.empty()) return 0;
  for (;;) {
    ssize_t n = ::recv(stream.fd(), into.data(), into.size(), 0);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(Errc::transport, errno_text("recv"));
    }
    stream.stats_.bytes_received += static_cast<std::size_t>(n);
    return static_cast<std::size_t>(n);
  }
}

void recv_exact(Stream& stream, MutableByteView into) {
  if (into.empty()) return;
  if (!stream.is_open()) throw Error(Errc::closed, "receive on closed stream");
  std::size_t got = 0;
  while (got < into.size()) {
    ssize_t n = ::recv(stream.fd(), into.data() + got, into.size() - got, 0);
    if (n < 0) {
      if (errno == EINTR) continue;
      if (errno == ECONNRESET)
        throw Error(Errc::truncated, "connection reset after " + std::to_string(got) + " of " +
                                         std::to_string(into.size()) + " bytes", got);
      throw Error(Errc::transport, errno_text("recv"), got);
    }
    if (n == 0)
      throw Error(Errc::truncated, "peer closed after " + std::to_string(got) + " of " +
                                       std::to_string(into.size()) + " bytes", got);
    got += static_cast<std::size_t>(n);
    stream.stats_.bytes_received += static_cast<std::size_t>(n);
  }
}

std::size_t apply_window(Stream& stream, std::size_t window) {
  if (window == 0) throw Error(Errc::range, "window must be > 0");
  if (!stream.is_open()) throw Error(Errc::closed, "set window on closed stream");
  int requested = static_cast<int>(std::min<std::size_t>(window, 1u << 30));
  for (int opt : {SO_SNDBUF, SO_RCVBUF}) {
    if (::setsockopt(stream.fd(), SOL_SOCKET, opt, &requested, sizeof requested) != 0)
      stream.warnings_.push_back(errno_text(opt == SO_SNDBUF ? "SO_SNDBUF" : "SO_RCVBUF"));
  }
  int granted = 0;
  socklen_t len = sizeof granted;
  if (::getsockopt(stream.fd(), SOL_SOCKET, SO_SNDBUF, &granted, &len) != 0)
    stream.warnings_.push_back(errno_text("getsockopt SO_SNDBUF"));
  stream.window_bytes_ = static_cast<std::size_t>(granted > 0 ? granted : requested);
  return *stream.window_bytes_;
}

}  // namespace mpw
