#include "mpw/filetools.hpp"

#include <sys/stat.h>

#include <condition_variable>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "mpw/error.hpp"
#include "mpw/process.hpp"

namespace mpw {

namespace {

constexpr std::size_t kFrameFixedSize = 2 + 4 + 8;

void note(const std::function<void(std::string_view)>& log, const std::string& message) {
  if (log) log(message);
}

std::vector<std::string> split_words(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::vector<std::string> words;
  for (std::string w; in >> w;) words.push_back(w);
  return words;
}

MessageBuffer exchange_status(Library& lib, PathId path, const std::string& status) {
  return lib.dsend_recv(path, as_bytes(status));
}

std::string as_string(const MessageBuffer& buf) {
  return {reinterpret_cast<const char*>(buf.data()), buf.size()};
}

}  // namespace

bool is_safe_relative_path(std::string_view path) {
  if (path.empty() || path.front() == '/') return false;
  std::size_t start = 0;
  while (start <= path.size()) {
    auto end = path.find('/', start);
    if (end == std::string_view::npos) end = path.size();
    auto segment = path.substr(start, end - start);
    if (segment == "..") return false;
    if (segment.find('\0') != std::string_view::npos) return false;
    start = end + 1;
  }
  return true;
}

MessageBuffer encode_frame_header(const FileFrameHeader& header) {
  if (!is_safe_relative_path(header.relative_path))
    throw Error(Errc::protocol, "unsafe relative path '" + header.relative_path + "'");
  if (header.relative_path.size() > 0xffff) throw Error(Errc::protocol, "relative path too long");
  MessageBuffer wire(kFrameFixedSize + header.relative_path.size());
  auto* p = wire.data();
  store_be<std::uint16_t>(p, static_cast<std::uint16_t>(header.relative_path.size()));
  p += 2;
  auto name = as_bytes(header.relative_path);
  std::copy(name.begin(), name.end(), p);
  p += name.size();
  store_be<std::uint32_t>(p, header.mode);
  store_be<std::uint64_t>(p + 4, header.size);
  return wire;
}

FileFrameHeader decode_frame_header(ByteView wire, std::size_t* consumed) {
  if (wire.size() < 2) throw Error(Errc::protocol, "short file frame header");
  auto name_len = load_be<std::uint16_t>(wire.data());
  if (wire.size() < kFrameFixedSize + name_len) throw Error(Errc::protocol, "short file frame header");
  FileFrameHeader header;
  header.relative_path.assign(reinterpret_cast<const char*>(wire.data() + 2), name_len);
  header.mode = load_be<std::uint32_t>(wire.data() + 2 + name_len);
  header.size = load_be<std::uint64_t>(wire.data() + 6 + name_len);
  if (consumed) *consumed = kFrameFixedSize + name_len;
  return header;
}

Manifest scan_manifest(const fs::path& root, std::vector<std::string>* warnings) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw Error(Errc::io, "not a readable directory: " + root.string());
  Manifest manifest;
  auto options = fs::directory_options::skip_permission_denied;
  fs::recursive_directory_iterator it(root, options, ec), end;
  if (ec) throw Error(Errc::io, "cannot scan " + root.string() + ": " + ec.message());
  for (; it != end; it.increment(ec)) {
    if (ec) {
      if (warnings) warnings->push_back("skipped: " + ec.message());
      ec.clear();
      continue;
    }
    struct stat st{};
    if (::lstat(it->path().c_str(), &st) != 0) {
      if (warnings) warnings->push_back("cannot stat " + it->path().string());
      continue;
    }
    if (S_ISDIR(st.st_mode) && ::access(it->path().c_str(), R_OK | X_OK) != 0) {
      if (warnings) warnings->push_back("unreadable directory skipped: " + it->path().string());
      it.disable_recursion_pending();
      continue;
    }
    if (!S_ISREG(st.st_mode)) continue;
    auto rel = it->path().lexically_relative(root).generic_string();
    manifest[rel] = FileStat{static_cast<std::uint64_t>(st.st_size),
                             static_cast<std::int64_t>(st.st_mtim.tv_sec) * 1'000'000'000 + st.st_mtim.tv_nsec};
  }
  return manifest;
}

SentFrame send_file_frame(Library& lib, PathId path, const fs::path& file, const std::string& relative_path) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error(Errc::io, "cannot open " + file.string());
  struct stat st{};
  if (::stat(file.c_str(), &st) != 0) throw Error(Errc::io, "cannot stat " + file.string());

  FileFrameHeader header{relative_path, static_cast<std::uint32_t>(st.st_mode & 07777),
                         static_cast<std::uint64_t>(st.st_size)};
  lib.dsend_recv(path, encode_frame_header(header));

  SentFrame sent;
  MessageBuffer block;
  std::uint64_t remaining = header.size;
  while (remaining > 0) {
    auto n = static_cast<std::size_t>(std::min<std::uint64_t>(remaining, kFrameBlockSize));
    block.assign(n, std::byte{0});
    if (sent.complete) {
      in.read(reinterpret_cast<char*>(block.data()), static_cast<std::streamsize>(n));
      if (static_cast<std::size_t>(in.gcount()) < n) sent.complete = false;
    }
    lib.dsend_recv(path, block);
    sent.payload_bytes += n;
    remaining -= n;
  }
  return sent;
}

ReceivedFrame receive_file_frame(Library& lib, PathId path, const fs::path& root,
                                 std::optional<fs::path> dest_file) {
  ReceivedFrame frame;
  auto wire = lib.dsend_recv(path, {});
  std::size_t consumed = 0;
  frame.header = decode_frame_header(wire, &consumed);
  if (consumed != wire.size()) throw Error(Errc::protocol, "trailing bytes after file frame header");

  fs::path temp;
  std::ofstream out;
  if (!is_safe_relative_path(frame.header.relative_path)) {
    frame.error = "rejected unsafe path '" + frame.header.relative_path + "'";
  } else {
    frame.written_to = dest_file ? *dest_file : root / fs::path(frame.header.relative_path);
    temp = frame.written_to.parent_path() / ("." + frame.written_to.filename().string() + ".mpw-partial");
    std::error_code ec;
    if (!frame.written_to.parent_path().empty()) fs::create_directories(frame.written_to.parent_path(), ec);
    out.open(temp, std::ios::binary | std::ios::trunc);
    if (!out) frame.error = "cannot write " + temp.string();
  }

  std::uint64_t received = 0;
  try {
    while (received < frame.header.size) {
      auto block = lib.dsend_recv(path, {});
      if (block.empty() || received + block.size() > frame.header.size)
        throw Error(Errc::protocol, "file content does not match advertised size");
      received += block.size();
      if (frame.error.empty()) {
        out.write(reinterpret_cast<const char*>(block.data()), static_cast<std::streamsize>(block.size()));
        if (!out) frame.error = "write failed for " + temp.string();
      }
    }
  } catch (...) {
    if (!temp.empty()) {
      out.close();
      std::error_code ec;
      fs::remove(temp, ec);
    }
    throw;
  }

  if (!temp.empty()) {
    out.close();
    std::error_code ec;
    if (frame.error.empty() && out.fail()) frame.error = "write failed for " + temp.string();
    if (frame.error.empty()) {
      fs::permissions(temp, static_cast<fs::perms>(frame.header.mode & 07777), ec);
      if (!ec) fs::rename(temp, frame.written_to, ec);
      if (ec) frame.error = "cannot finalize " + frame.written_to.string() + ": " + ec.message();
    }
    if (!frame.error.empty()) fs::remove(temp, ec);
  }
  frame.written = frame.error.empty();
  return frame;
}

FileSpec FileSpec::parse(std::string_view text) {
  if (text.empty()) throw Error(Errc::usage, "empty file argument");
  auto colon = text.find(':');
  auto slash = text.find('/');
  if (colon != std::string_view::npos && colon > 0 && (slash == std::string_view::npos || colon < slash)) {
    if (colon + 1 == text.size()) throw Error(Errc::usage, "remote spec '" + std::string(text) + "' has no path");
    return {std::string(text.substr(0, colon)), std::string(text.substr(colon + 1))};
  }
  return {std::nullopt, std::string(text)};
}

namespace {

PathConfig copy_config(const MpwcpOptions& options) {
  PathConfig config;
  config.stream_count = options.streams;
  config.chunk_size = options.chunk_size;
  config.autotune = false;
  config.validate();
  return config;
}

/// Sends `file` and waits for the receiver's verdict.
void push_file(Library& lib, PathId path, const fs::path& file) {
  if (!fs::is_regular_file(file)) throw Error(Errc::io, "not a regular file: " + file.string());
  send_file_frame(lib, path, file, file.filename().string());
  auto verdict = as_string(exchange_status(lib, path, {}));
  if (verdict != "OK") throw Error(Errc::io, "remote side: " + verdict);
}

/// Receives one file into `dest` (a directory or a file name) and reports the verdict.
void pull_file(Library& lib, PathId path, const fs::path& dest) {
  std::error_code ec;
  bool into_dir = fs::is_directory(dest, ec);
  auto frame = into_dir ? receive_file_frame(lib, path, dest)
                        : receive_file_frame(lib, path, dest.parent_path(), dest);
  if (into_dir && frame.error.empty() && frame.header.relative_path.find('/') != std::string::npos)
    frame.error = "unexpected nested path '" + frame.header.relative_path + "'";
  exchange_status(lib, path, frame.error.empty() ? "OK" : "ERR " + frame.error);
  if (!frame.error.empty()) throw Error(Errc::io, frame.error);
}

}  // namespace

void mpwcp(const FileSpec& source, const FileSpec& dest, const MpwcpOptions& options) {
  if (source.remote() == dest.remote())
    throw Error(Errc::usage, "exactly one of source and destination must be remote (host:path)");
  const auto config = copy_config(options);
  const auto& remote = source.remote() ? source : dest;
  const auto mode = source.remote() ? "--peer-send" : "--peer-recv";

  std::ostringstream command;
  command << shell_quote(options.remote_program) << " -n " << options.streams << " -c " << options.chunk_size
          << " --timeout " << options.timeout.count() << ' ' << mode << '=' << shell_quote(remote.path);
  auto argv = split_words(options.rsh);
  if (argv.empty()) throw Error(Errc::usage, "empty remote shell command");
  argv.push_back(*remote.host);
  argv.push_back(command.str());

  auto child = Subprocess::spawn(argv);
  std::optional<std::uint16_t> port;
  while (auto line = child.read_line(options.timeout)) {
    if (line->starts_with(kPeerPortBanner)) {
      port = static_cast<std::uint16_t>(std::stoul(line->substr(kPeerPortBanner.size())));
      break;
    }
  }
  if (!port) {
    int status = child.wait();
    throw Error(Errc::connect_failed, "remote peer did not start (exit status " + std::to_string(status) + ")");
  }

  Library lib;
  auto path = lib.create_path({*remote.host, *port}, options.streams, Role::client, config, options.timeout);
  try {
    if (source.remote())
      pull_file(lib, path, dest.path);
    else
      push_file(lib, path, source.path);
  } catch (...) {
    lib.finalize();
    child.kill();
    child.wait();
    throw;
  }
  lib.destroy_path(path);
  int status = child.wait();
  if (status != 0) throw Error(Errc::io, "remote peer exited with status " + std::to_string(status));
}

void mpwcp_peer(PeerMode mode, const fs::path& file, const MpwcpOptions& options,
                const std::function<void(std::string_view)>& announce) {
  const auto config = copy_config(options);
  auto listener = Listener::bind({"0.0.0.0", 0});
  announce(std::string(kPeerPortBanner) + std::to_string(listener.port()));
  Library lib;
  auto path = lib.accept_path(listener, options.streams, config, options.timeout);
  if (mode == PeerMode::send)
    push_file(lib, path, file);
  else
    pull_file(lib, path, file);
  lib.destroy_path(path);
}

GatherSource::GatherSource(Library& lib, PathId path, fs::path root)
    : lib_(lib), path_(path), root_(std::move(root)) {}

GatherStats GatherSource::run_cycle() {
  GatherStats cycle;
  for (const auto& [rel, stat] : scan_manifest(root_)) {
    auto it = sent_.find(rel);
    if (it != sent_.end() && it->second == stat) continue;
    auto sent = send_file_frame(lib_, path_, root_ / rel, rel);
    ++cycle.frames;
    cycle.payload_bytes += sent.payload_bytes;
    if (sent.complete)
      sent_[rel] = stat;
    else
      sent_.erase(rel);
  }
  totals_.frames += cycle.frames;
  totals_.payload_bytes += cycle.payload_bytes;
  return cycle;
}

GatherSink::GatherSink(Library& lib, PathId path, fs::path root, std::function<void(std::string_view)> log)
    : lib_(lib), path_(path), root_(std::move(root)), log_(std::move(log)) {}

bool GatherSink::receive_one() {
  ReceivedFrame frame;
  try {
    frame = receive_file_frame(lib_, path_, root_);
  } catch (const Error& e) {
    note(log_, std::string("sink stopped: ") + e.what());
    return false;
  }
  ++totals_.frames;
  totals_.payload_bytes += frame.header.size;
  if (!frame.error.empty()) {
    ++rejected_;
    note(log_, "skipped " + frame.header.relative_path + ": " + frame.error);
  }
  return true;
}

void GatherSink::run(std::stop_token stop) {
  std::stop_callback on_stop(stop, [this] {
    try {
      lib_.destroy_path(path_);
    } catch (const Error&) {
    }
  });
  while (!stop.stop_requested() && receive_one()) {
  }
}

void datagather_sync(Library& lib, PathId path, const fs::path& source_root, Seconds poll_interval,
                     std::stop_token stop, std::function<void(std::string_view)> log) {
  GatherSource source(lib, path, source_root);
  std::mutex mutex;
  std::condition_variable_any wake;
  while (!stop.stop_requested()) {
    try {
      auto cycle = source.run_cycle();
      if (cycle.frames)
        note(log, "sent " + std::to_string(cycle.frames) + " files, " + std::to_string(cycle.payload_bytes) +
                      " bytes");
    } catch (const Error& e) {
      note(log, std::string("cycle failed, retrying: ") + e.what());
    }
    std::unique_lock lock(mutex);
    wake.wait_for(lock, stop, poll_interval, [] { return false; });
  }
}

}  // namespace mpw
