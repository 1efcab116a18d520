#pragma once

#include <signal.h>

#include <stop_token>
#include <thread>

namespace mpw::tools {

/// Blocks SIGINT/SIGTERM process-wide (call before starting threads) and
/// returns a thread that requests `source` to stop when one arrives.
inline std::jthread stop_on_signal(std::stop_source source) {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  return std::jthread([set, source](std::stop_token self) mutable {
    // Wake every 200 ms so the thread can exit when the tool finishes on its own.
    timespec tick{0, 200'000'000};
    while (!self.stop_requested()) {
      if (sigtimedwait(&set, nullptr, &tick) > 0) {
        source.request_stop();
        return;
      }
    }
  });
}

}  // namespace mpw::tools
