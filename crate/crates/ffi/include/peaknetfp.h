#ifndef PEAKNETFP_H
#define PEAKNETFP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Mirrors the command-line exit codes, plus codes for misuse of the interface itself.
 */
typedef enum PnfpStatus {
  PNFP_STATUS_OK = 0,
  /**
   * Bad configuration or arguments.
   */
  PNFP_STATUS_CONFIG = 1,
  /**
   * Unreadable, malformed or unsuitable input data.
   */
  PNFP_STATUS_DATA = 2,
  /**
   * Internal invariant violated.
   */
  PNFP_STATUS_INTERNAL = 3,
  PNFP_STATUS_NULL_ARGUMENT = 4,
  /**
   * Output buffer too small; the required size has been written.
   */
  PNFP_STATUS_BUFFER_TOO_SMALL = 5,
  PNFP_STATUS_PANIC = 6,
} PnfpStatus;

/**
 * Reference fingerprints. Tracks can be added until the first search, which freezes the
 * database.
 */
typedef struct PnfpDatabase PnfpDatabase;

/**
 * Trained encoder plus its audio front end.
 */
typedef struct PnfpModel PnfpModel;

/**
 * One ranked `(track, offset)` hypothesis.
 */
typedef struct PnfpMatch {
  /**
   * Index into the database's track list; see [`pnfp_db_track_id`].
   */
  uint32_t track;
  /**
   * Segment position of the query start in the track (may be negative).
   */
  int64_t offset;
  float score;
} PnfpMatch;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread. Valid until the next call that fails.
 */
const char *pnfp_last_error(void);

/**
 * Loads weights from `checkpoint`. `config` is a pipeline TOML file; when null, the file
 * next to the checkpoint with a `.toml` extension is used if present, else defaults.
 *
 * # Safety
 * Path arguments must be null or NUL-terminated strings; `out` must be writable.
 */
enum PnfpStatus pnfp_model_load(const char *checkpoint, const char *config, struct PnfpModel **out);

/**
 * Untrained model with the default layout and seeded weights.
 *
 * # Safety
 * `out` must be writable.
 */
enum PnfpStatus pnfp_model_new_default(uint64_t seed, struct PnfpModel **out);

/**
 * # Safety
 * `model` must be null or a handle from this library that has not been freed.
 */
void pnfp_model_free(struct PnfpModel *model);

/**
 * Fingerprint length, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t pnfp_model_dim(const struct PnfpModel *model);

/**
 * Sample rate the model analyses audio at; input at other rates is resampled.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
uint32_t pnfp_model_sample_rate(const struct PnfpModel *model);

/**
 * Fingerprints mono audio, one row of `pnfp_model_dim` floats per segment, written to
 * `out` (row-major). `*n_segments` receives the segment count; when `out` is null or
 * `capacity` (in segments) is too small nothing is written and `BUFFER_TOO_SMALL` is
 * returned for the latter.
 *
 * # Safety
 * `samples` must point at `n` floats, `out` at `capacity * dim` floats, `n_segments` must
 * be writable.
 */
enum PnfpStatus pnfp_fingerprint(const struct PnfpModel *model,
                                 const float *samples,
                                 size_t n,
                                 uint32_t sample_rate,
                                 float *out,
                                 size_t capacity,
                                 size_t *n_segments);

/**
 * Empty database.
 */
struct PnfpDatabase *pnfp_db_new(void);

/**
 * Reads a database file written by `build-db`/`build-index` or [`pnfp_db_save`].
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum PnfpStatus pnfp_db_open(const char *path, struct PnfpDatabase **out);

/**
 * # Safety
 * `db` must be null or a live handle.
 */
void pnfp_db_free(struct PnfpDatabase *db);

/**
 * Fingerprints a reference track and appends it.
 *
 * # Safety
 * `id` must be a NUL-terminated string and `samples` point at `n` floats.
 */
enum PnfpStatus pnfp_db_add_track(struct PnfpDatabase *db,
                                  const struct PnfpModel *model,
                                  const char *id,
                                  const float *samples,
                                  size_t n,
                                  uint32_t sample_rate);

/**
 * Number of tracks.
 *
 * # Safety
 * `db` must be null or a live handle.
 */
size_t pnfp_db_track_count(const struct PnfpDatabase *db);

/**
 * Track id, owned by the database; null when out of range.
 *
 * # Safety
 * `db` must be null or a live handle.
 */
const char *pnfp_db_track_id(const struct PnfpDatabase *db, uint32_t track);

/**
 * Writes the database (and its IVFPQ index, if any) to `path`.
 *
 * # Safety
 * `db` must be a live handle and `path` a NUL-terminated string.
 */
enum PnfpStatus pnfp_db_save(struct PnfpDatabase *db, const char *path);

/**
 * Identifies a query clip. Up to `capacity` matches, one per track and best first, go to
 * `out`; `*n_out` receives how many were written. `use_ivfpq` selects the approximate
 * index when the database has one.
 *
 * # Safety
 * `samples` must point at `n` floats, `out` at `capacity` matches; `n_out` writable.
 */
enum PnfpStatus pnfp_query(const struct PnfpModel *model,
                           struct PnfpDatabase *db,
                           const float *samples,
                           size_t n,
                           uint32_t sample_rate,
                           bool use_ivfpq,
                           struct PnfpMatch *out,
                           size_t capacity,
                           size_t *n_out);

/**
 * Freezes the database and attaches an IVFPQ index with default parameters.
 *
 * # Safety
 * `db` must be a live handle.
 */
enum PnfpStatus pnfp_db_build_ivfpq(struct PnfpDatabase *db);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PEAKNETFP_H */
