/* C-compatible surface over the process-wide library, for scripting bindings.
 * Functions returning int give 0 (or a positive id) on success and -1 on
 * failure; mpw_last_error() then describes the failure for this thread. */
#ifndef MPW_C_API_H
#define MPW_C_API_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

int mpw_init(void);
int mpw_finalize(void);

/* server != 0 binds host:port and waits for the client. */
int mpw_create_path(const char* host, int port, int streams, int server, int autotune);
int mpw_destroy_path(int path);

int mpw_send_recv(int path, const char* out, size_t out_len, char* in, size_t in_len);
/* *in is allocated by the library; release it with mpw_free. */
int mpw_dsend_recv(int path, const char* out, size_t out_len, char** in, size_t* in_len);
void mpw_free(char* buffer);

int mpw_barrier(int path);

int mpw_set_chunk_size(int path, unsigned long long bytes);
/* 0 disables pacing. */
int mpw_set_pacing_rate(int path, unsigned long long bytes_per_second);
int mpw_set_window(int path, unsigned long long bytes);
int mpw_set_autotuning(int path, int enabled);

const char* mpw_last_error(void);

#ifdef __cplusplus
}
#endif

#endif
