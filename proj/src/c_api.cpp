#include "mpw/c_api.h"

#include <cstdlib>
#include <cstring>
#include <string>

#include "mpw/error.hpp"
#include "mpw/library.hpp"

namespace {

thread_local std::string last_error;

template <typename F>
int guarded(F&& f) {
  try {
    last_error.clear();
    return f();
  } catch (const std::exception& e) {
    last_error = e.what();
  } catch (...) {
    last_error = "unknown error";
  }
  return -1;
}

mpw::PathId to_id(int path) {
  if (path <= 0) throw mpw::Error(mpw::Errc::no_such_path, "no such path " + std::to_string(path));
  return static_cast<mpw::PathId>(path);
}

mpw::ByteView view(const char* data, std::size_t len) {
  if (len && !data) throw mpw::Error(mpw::Errc::precondition, "null buffer");
  return {reinterpret_cast<const std::byte*>(data), len};
}

}  // namespace

extern "C" {

int mpw_init(void) {
  return guarded([] {
    mpw::default_library().init();
    return 0;
  });
}

int mpw_finalize(void) {
  return guarded([] {
    mpw::default_library().finalize();
    return 0;
  });
}

int mpw_create_path(const char* host, int port, int streams, int server, int autotune) {
  return guarded([&] {
    if (!host) throw mpw::Error(mpw::Errc::precondition, "null host");
    if (port < 0 || port > 65535) throw mpw::Error(mpw::Errc::precondition, "port out of range");
    if (streams < 1) throw mpw::Error(mpw::Errc::precondition, "stream count must be in [1, 256]");
    mpw::PathConfig config;
    config.autotune = autotune != 0;
    auto id = mpw::default_library().create_path({host, static_cast<std::uint16_t>(port)},
                                                 static_cast<std::size_t>(streams),
                                                 server ? mpw::Role::server : mpw::Role::client, config);
    return static_cast<int>(id);
  });
}

int mpw_destroy_path(int path) {
  return guarded([&] {
    mpw::default_library().destroy_path(to_id(path));
    return 0;
  });
}

int mpw_send_recv(int path, const char* out, size_t out_len, char* in, size_t in_len) {
  return guarded([&] {
    if (in_len && !in) throw mpw::Error(mpw::Errc::precondition, "null receive buffer");
    auto got = mpw::default_library().send_recv(to_id(path), view(out, out_len), in_len);
    if (!got.empty()) std::memcpy(in, got.data(), got.size());
    return 0;
  });
}

int mpw_dsend_recv(int path, const char* out, size_t out_len, char** in, size_t* in_len) {
  return guarded([&] {
    if (!in || !in_len) throw mpw::Error(mpw::Errc::precondition, "null output pointer");
    auto got = mpw::default_library().dsend_recv(to_id(path), view(out, out_len));
    char* buffer = static_cast<char*>(std::malloc(got.empty() ? 1 : got.size()));
    if (!buffer) throw mpw::Error(mpw::Errc::io, "out of memory");
    if (!got.empty()) std::memcpy(buffer, got.data(), got.size());
    *in = buffer;
    *in_len = got.size();
    return 0;
  });
}

void mpw_free(char* buffer) { std::free(buffer); }

int mpw_barrier(int path) {
  return guarded([&] {
    mpw::default_library().barrier(to_id(path));
    return 0;
  });
}

int mpw_set_chunk_size(int path, unsigned long long bytes) {
  return guarded([&] {
    mpw::default_library().configure(to_id(path), mpw::Setting::chunk_size, bytes);
    return 0;
  });
}

int mpw_set_pacing_rate(int path, unsigned long long bytes_per_second) {
  return guarded([&] {
    if (bytes_per_second == 0)
      mpw::default_library().set_pacing_rate(to_id(path), std::nullopt);
    else
      mpw::default_library().set_pacing_rate(to_id(path), bytes_per_second);
    return 0;
  });
}

int mpw_set_window(int path, unsigned long long bytes) {
  return guarded([&] {
    mpw::default_library().configure(to_id(path), mpw::Setting::window, bytes);
    return 0;
  });
}

int mpw_set_autotuning(int path, int enabled) {
  return guarded([&] {
    mpw::default_library().set_autotuning(to_id(path), enabled != 0);
    return 0;
  });
}

const char* mpw_last_error(void) { return last_error.c_str(); }

}  // extern "C"
