#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stop_token>
#include <string>
#include <string_view>
#include <vector>

#include "mpw/bytes.hpp"
#include "mpw/library.hpp"

namespace mpw {

namespace fs = std::filesystem;

/// Metadata that precedes a file's content on the wire:
///   path_len (2, BE) | path bytes | mode (4, BE) | size (8, BE) | content
struct FileFrameHeader {
  std::string relative_path;
  std::uint32_t mode = 0644;
  std::uint64_t size = 0;

  friend bool operator==(const FileFrameHeader&, const FileFrameHeader&) = default;
};

/// Relative, non-empty, and free of `..` segments.
bool is_safe_relative_path(std::string_view path);

/// Throws Error(protocol) for unsafe paths.
MessageBuffer encode_frame_header(const FileFrameHeader& header);

/// Parses a header without judging the path; callers check is_safe_relative_path.
/// Throws Error(protocol) on a short or malformed buffer.
FileFrameHeader decode_frame_header(ByteView wire, std::size_t* consumed = nullptr);

inline constexpr std::size_t kFrameBlockSize = 16 * MiB;

struct FileStat {
  std::uint64_t size = 0;
  std::int64_t mtime_ns = 0;

  friend bool operator==(const FileStat&, const FileStat&) = default;
};

/// Regular files under a root, keyed by '/'-separated relative path.
using Manifest = std::map<std::string, FileStat>;

/// Recursive scan; symlinks are skipped and unreadable subtrees are reported
/// through `warnings` rather than failing the scan.
Manifest scan_manifest(const fs::path& root, std::vector<std::string>* warnings = nullptr);

struct SentFrame {
  std::uint64_t payload_bytes = 0;
  /// False when the file shrank while being read; the shortfall went out as zeros.
  bool complete = true;
};

/// Sends one FileFrame as a sequence of dynamic messages (header, then
/// content blocks). The peer runs receive_file_frame.
SentFrame send_file_frame(Library& lib, PathId path, const fs::path& file, const std::string& relative_path);

struct ReceivedFrame {
  FileFrameHeader header;
  fs::path written_to;
  bool written = false;
  std::string error;
};

/// Receives one FileFrame. With `dest_file` set the content goes there;
/// otherwise it goes to `root / relative_path`. Unsafe paths and local write
/// failures drain the content and report `error` instead of throwing;
/// transport failures throw.
ReceivedFrame receive_file_frame(Library& lib, PathId path, const fs::path& root,
                                 std::optional<fs::path> dest_file = std::nullopt);

// mpw-cp ------------------------------------------------------------------

/// `host:path` is remote (scp rule: a colon before any slash); anything else is local.
struct FileSpec {
  std::optional<std::string> host;
  std::string path;

  static FileSpec parse(std::string_view text);
  bool remote() const noexcept { return host.has_value(); }
};

struct MpwcpOptions {
  std::size_t streams = 1;
  std::size_t chunk_size = kDefaultChunkSize;
  /// Remote shell command, split on whitespace; the host and the quoted
  /// remote command line are appended.
  std::string rsh = "ssh";
  /// Program name of mpw-cp on the remote host.
  std::string remote_program = "mpw-cp";
  Seconds timeout{30.0};
};

inline constexpr std::string_view kPeerPortBanner = "MPWCP-PORT ";

/// Copies between a local file and a remote one. Exactly one side must be remote.
void mpwcp(const FileSpec& source, const FileSpec& dest, const MpwcpOptions& options);

enum class PeerMode { send, receive };

/// Remote half of mpw-cp: listens on an ephemeral port, announces it on
/// `announce` as "MPWCP-PORT <n>", and serves one transfer.
void mpwcp_peer(PeerMode mode, const fs::path& file, const MpwcpOptions& options,
                const std::function<void(std::string_view)>& announce);

// DataGather ----------------------------------------------------------------

struct GatherStats {
  std::size_t frames = 0;
  std::uint64_t payload_bytes = 0;
};

/// Sending half of a one-way directory sync. Files whose (size, mtime)
/// differ from what was last sent are transmitted; deletions are not.
class GatherSource {
 public:
  GatherSource(Library& lib, PathId path, fs::path root);

  /// One scan-and-send pass. Throws on transport failure; files not yet sent
  /// are retried on the next cycle.
  GatherStats run_cycle();
  const GatherStats& totals() const noexcept { return totals_; }
  void rebind(PathId path) noexcept { path_ = path; }

 private:
  Library& lib_;
  PathId path_;
  fs::path root_;
  Manifest sent_;
  GatherStats totals_;
};

/// Receiving half; writes frames under `root`.
class GatherSink {
 public:
  GatherSink(Library& lib, PathId path, fs::path root, std::function<void(std::string_view)> log = {});

  /// Receives one frame. Returns false once the path has closed.
  bool receive_one();
  /// Receives until the path closes or `stop` is requested.
  void run(std::stop_token stop);

  const GatherStats& totals() const noexcept { return totals_; }
  std::size_t rejected() const noexcept { return rejected_; }

 private:
  Library& lib_;
  PathId path_;
  fs::path root_;
  std::function<void(std::string_view)> log_;
  GatherStats totals_;
  std::size_t rejected_ = 0;
};

/// Runs source cycles every `poll_interval` until `stop` is requested.
void datagather_sync(Library& lib, PathId path, const fs::path& source_root, Seconds poll_interval,
                     std::stop_token stop, std::function<void(std::string_view)> log = {});

}  // namespace mpw
