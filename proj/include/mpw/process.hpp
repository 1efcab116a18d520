#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <sys/types.h>
#include <vector>

#include "mpw/stream.hpp"

namespace mpw {

/// Child process with its stdout captured through a pipe; stderr is inherited.
class Subprocess {
 public:
  /// argv[0] is looked up on PATH. Throws Error(io) if the fork/exec setup fails.
  static Subprocess spawn(const std::vector<std::string>& argv);

  Subprocess(Subprocess&& other) noexcept;
  Subprocess& operator=(Subprocess&&) = delete;
  Subprocess(const Subprocess&) = delete;
  ~Subprocess();

  /// Next stdout line without the newline; nullopt at EOF. Throws Error(timeout).
  std::optional<std::string> read_line(Seconds timeout);
  /// Exit status (128 + signal number when killed by a signal).
  int wait();
  void kill() noexcept;

 private:
  Subprocess(pid_t pid, int out_fd) : pid_(pid), out_fd_(out_fd) {}
  pid_t pid_ = -1;
  int out_fd_ = -1;
  std::string pending_;
};

/// Single-quotes `word` for a POSIX shell.
std::string shell_quote(std::string_view word);

}  // namespace mpw
