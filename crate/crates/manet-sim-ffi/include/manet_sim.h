#ifndef MANET_SIM_H
#define MANET_SIM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code returned by every fallible entry point.
 */
typedef enum MsimStatus {
  MsimOk = 0,
  MsimNullPointer = 1,
  MsimInvalidUtf8 = 2,
  MsimInvalidKey = 3,
  MsimInvalidConfig = 4,
  MsimRunFailed = 5,
  MsimPanic = 6,
} MsimStatus;

/**
 * Opaque scenario configuration handle.
 */
typedef struct MsimConfig MsimConfig;

/**
 * Aggregated results of one scenario run.
 */
typedef struct MsimMetrics {
  double pdr;
  double avg_delay_ms;
  double throughput_bps;
  double energy_j;
  uint64_t sent;
  uint64_t received;
  uint64_t inflight;
  uint64_t drops_ttl;
  uint64_t drops_buffer;
  uint64_t drops_retry;
  uint64_t drops_collision;
  uint64_t drops_dieout;
} MsimMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the current thread's last error message into `buf` (NUL-terminated,
 * truncated to `cap`). Returns the full message length in bytes, excluding
 * the NUL; zero means no error recorded.
 *
 * # Safety
 * `buf` must point to `cap` writable bytes, or be null (then only the
 * length is returned).
 */
uintptr_t msim_last_error(char *buf, uintptr_t cap);

/**
 * Allocate a configuration with the base-scenario defaults. Free with
 * [`msim_config_free`].
 */
struct MsimConfig *msim_config_new(void);

/**
 * Release a configuration handle. A null handle is ignored.
 *
 * # Safety
 * `cfg` must be a pointer returned by [`msim_config_new`] that has not
 * been freed already.
 */
void msim_config_free(struct MsimConfig *cfg);

/**
 * Set one configuration key from its string form, e.g.
 * `msim_config_set(cfg, "protocol", "aeerg")`.
 *
 * # Safety
 * `cfg` must be a live handle; `key` and `value` must be NUL-terminated.
 */
enum MsimStatus msim_config_set(struct MsimConfig *cfg, const char *key, const char *value);

/**
 * Execute one run of the configured scenario and fill `out`.
 *
 * # Safety
 * `cfg` must be a live handle and `out` must point to writable storage for
 * one [`MsimMetrics`].
 */
enum MsimStatus msim_run(const struct MsimConfig *cfg, struct MsimMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MANET_SIM_H */
