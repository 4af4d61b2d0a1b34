#ifndef CHROMAFOCUS_H
#define CHROMAFOCUS_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CfCommand {
  CF_TRACE = 0,
  CF_SWEEP = 1,
  CF_EVENTS = 2,
  CF_ANALYZE = 3,
  CF_CALIBRATE = 4,
  CF_SEGMENT = 5,
  CF_SPECTRUM = 6,
} CfCommand;

typedef enum CfStatus {
  CF_OK = 0,
  CF_NULL_POINTER = 1,
  CF_INVALID_ARGUMENT = 2,
  CF_CONFIG = 3,
  CF_IO = 4,
  CF_MISSING_INPUT = 5,
  CF_ALGORITHM = 6,
  CF_PANIC = 7,
} CfStatus;

/**
 * Opaque run configuration.
 */
typedef struct CfConfig CfConfig;

/**
 * Opaque event stream.
 */
typedef struct CfEvents CfEvents;

/**
 * Opaque intensity stack.
 */
typedef struct CfStack CfStack;

/**
 * One event as laid out for C.
 */
typedef struct CfEvent {
  uint64_t t_us;
  uint16_t x;
  uint16_t y;
  int8_t p;
  uint32_t f_um;
} CfEvent;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * Valid until the next call on the same thread.
 */
const char *cf_last_error(void);

/**
 * Library version, NUL-terminated and static.
 */
const char *cf_version(void);

/**
 * Loads and validates a TOML config file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum CfStatus cf_config_load(const char *path, struct CfConfig **out);

/**
 * Parses and validates a config from TOML text.
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `out` must be writable.
 */
enum CfStatus cf_config_parse(const char *toml, struct CfConfig **out);

/**
 * Sets the config's random seed.
 *
 * # Safety
 * `cfg` must be a live handle or null.
 */
enum CfStatus cf_config_set_seed(struct CfConfig *cfg, uint64_t seed);

/**
 * # Safety
 * `cfg` must come from `cf_config_load`/`cf_config_parse` and not be used
 * afterwards. Null is ignored.
 */
void cf_config_free(struct CfConfig *cfg);

/**
 * Runs one pipeline step, writing its artifacts under `out_dir`.
 * `threads == 0` uses the config's setting or all cores.
 *
 * # Safety
 * `cfg` must be a live handle; `out_dir` a NUL-terminated string.
 */
enum CfStatus cf_run(const struct CfConfig *cfg,
                     enum CfCommand command,
                     const char *out_dir,
                     size_t threads);

/**
 * Reads a `stack.bin` file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum CfStatus cf_stack_read(const char *path, struct CfStack **out);

/**
 * Stack dimensions. Any output pointer may be null.
 *
 * # Safety
 * `stack` must be a live handle; non-null outputs must be writable.
 */
enum CfStatus cf_stack_dims(const struct CfStack *stack,
                            size_t *n_wavelengths,
                            size_t *n_distances,
                            size_t *n_theta,
                            size_t *n_phi);

/**
 * Retina distance (mm) of the plane with the brightest bin for a swept
 * wavelength.
 *
 * # Safety
 * `stack` must be a live handle; `out_mm` must be writable.
 */
enum CfStatus cf_stack_best_focus(const struct CfStack *stack,
                                  double wavelength_nm,
                                  double *out_mm);

/**
 * Copies one plane (row-major, `n_theta * n_phi` counts) into `buf`.
 *
 * # Safety
 * `stack` must be a live handle; `buf` must hold `len` elements.
 */
enum CfStatus cf_stack_copy_plane(const struct CfStack *stack,
                                  size_t wavelength_idx,
                                  size_t distance_idx,
                                  uint32_t *buf,
                                  size_t len);

/**
 * # Safety
 * `stack` must come from `cf_stack_read` and not be used afterwards. Null
 * is ignored.
 */
void cf_stack_free(struct CfStack *stack);

/**
 * Reads an event stream in the binary or CSV format.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum CfStatus cf_events_read(const char *path, struct CfEvents **out);

/**
 * Number of events in the stream, 0 for a null handle.
 *
 * # Safety
 * `events` must be a live handle or null.
 */
size_t cf_events_len(const struct CfEvents *events);

/**
 * Copies event `index` into `out`.
 *
 * # Safety
 * `events` must be a live handle; `out` must be writable.
 */
enum CfStatus cf_events_get(const struct CfEvents *events, size_t index, struct CfEvent *out);

/**
 * # Safety
 * `events` must come from `cf_events_read` and not be used afterwards.
 * Null is ignored.
 */
void cf_events_free(struct CfEvents *events);

/**
 * Refractive index of a named material preset (e.g. "n-bk7").
 *
 * # Safety
 * `preset` must be a NUL-terminated string; `out` must be writable.
 */
enum CfStatus cf_refractive_index(const char *preset, double wavelength_nm, double *out);

/**
 * Paraxial ball-lens focal lengths (mm) for index `n` and diameter `d`.
 *
 * # Safety
 * `efl_mm` and `bfl_mm` must be writable.
 */
enum CfStatus cf_ball_lens_focal_lengths(double n,
                                         double diameter_mm,
                                         double *efl_mm,
                                         double *bfl_mm);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CHROMAFOCUS_H */
