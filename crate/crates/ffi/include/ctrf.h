#ifndef CTRF_H
#define CTRF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CtrfStatus {
  CTRF_STATUS_OK = 0,
  CTRF_STATUS_NULL_POINTER = 1,
  CTRF_STATUS_INVALID_UTF8 = 2,
  CTRF_STATUS_BUFFER_TOO_SMALL = 3,
  CTRF_STATUS_IO = 10,
  CTRF_STATUS_PARSE = 11,
  CTRF_STATUS_VALIDATION = 12,
  CTRF_STATUS_DOMAIN = 13,
  CTRF_STATUS_MAPPING = 14,
  CTRF_STATUS_ENCODING = 15,
  CTRF_STATUS_CONTRACT = 16,
  CTRF_STATUS_SINGULAR = 17,
  CTRF_STATUS_DIVERGENCE = 18,
  CTRF_STATUS_NO_FILL = 19,
  CTRF_STATUS_LOAD = 20,
  CTRF_STATUS_PANIC = 99,
} CtrfStatus;

typedef enum CtrfServeMode {
  CTRF_SERVE_MODE_BID = 0,
  CTRF_SERVE_MODE_CTR = 1,
} CtrfServeMode;

typedef struct CtrfKeywordMap CtrfKeywordMap;

typedef struct CtrfModel CtrfModel;

typedef struct CtrfServer CtrfServer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until the next failing call.
 */
const char *ctrf_last_error_message(void);

/**
 * Static name of a status code.
 */
const char *ctrf_status_name(enum CtrfStatus status);

/**
 * Library version, static.
 */
const char *ctrf_version(void);

/**
 * # Safety
 * `path` must be a valid C string; `out` must be writable.
 */
enum CtrfStatus ctrf_model_load(const char *path, struct CtrfModel **out);

/**
 * # Safety
 * `json` must be a valid C string; `out` must be writable.
 */
enum CtrfStatus ctrf_model_from_json(const char *json, struct CtrfModel **out);

/**
 * Predicted CTR, unclamped. `placement` is 1 for above the fold, 0 below.
 *
 * # Safety
 * `model` must come from `ctrf_model_load`/`ctrf_model_from_json`; `size` a valid C string.
 */
enum CtrfStatus ctrf_model_predict(const struct CtrfModel *model,
                                   uint8_t placement,
                                   const char *size,
                                   double bid,
                                   double keyword_value,
                                   double *out);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void ctrf_model_free(struct CtrfModel *model);

/**
 * # Safety
 * `path` must be a valid C string; `out` must be writable.
 */
enum CtrfStatus ctrf_keyword_map_load(const char *path, struct CtrfKeywordMap **out);

/**
 * Value of the best-supported mapped keyword among `keywords`. With `strict`
 * false an unmapped page falls back to the first cluster's base value.
 *
 * # Safety
 * `keywords` must point to `n` valid C strings.
 */
enum CtrfStatus ctrf_keyword_map_resolve(const struct CtrfKeywordMap *map,
                                         const char *const *keywords,
                                         size_t n,
                                         bool strict,
                                         double *out);

/**
 * # Safety
 * `map` must be null or a handle not yet freed.
 */
void ctrf_keyword_map_free(struct CtrfKeywordMap *map);

/**
 * Loads a serving snapshot from an ad catalog, model and keyword map.
 *
 * # Safety
 * Paths must be valid C strings; `out` must be writable.
 */
enum CtrfStatus ctrf_server_open(const char *ads_path,
                                 const char *model_path,
                                 const char *map_path,
                                 struct CtrfServer **out);

/**
 * Rereads the files given to `ctrf_server_open` and swaps them in atomically.
 * On failure the previous snapshot stays active.
 *
 * # Safety
 * `server` must be a live handle.
 */
enum CtrfStatus ctrf_server_reload(const struct CtrfServer *server);

/**
 * Chooses an ad. On success writes the NUL-terminated `ad_id` into
 * `ad_id_buf` and the score (bid or predicted CTR) into `score_out`.
 * Returns `CTRF_STATUS_NO_FILL` when no ad is eligible.
 *
 * `country` may be null.
 *
 * # Safety
 * `server` must be a live handle; `keywords` must point to `n_keywords` C
 * strings; `ad_id_buf` must hold `ad_id_buf_len` bytes.
 */
enum CtrfStatus ctrf_server_serve(const struct CtrfServer *server,
                                  uint8_t placement,
                                  const char *size,
                                  const char *category,
                                  const char *const *keywords,
                                  size_t n_keywords,
                                  const char *country,
                                  enum CtrfServeMode mode,
                                  char *ad_id_buf,
                                  size_t ad_id_buf_len,
                                  double *score_out);

/**
 * # Safety
 * `server` must be null or a handle not yet freed.
 */
void ctrf_server_free(struct CtrfServer *server);

/**
 * sqrt(Σ(y − y_pred)² / n).
 *
 * # Safety
 * `y` and `y_pred` must each point to `n` doubles.
 */
enum CtrfStatus ctrf_standard_error(const double *y, const double *y_pred, size_t n, double *out);

/**
 * 1 − SSE/SSTO. Fails with `CTRF_STATUS_DOMAIN` when `y` is constant.
 *
 * # Safety
 * `y` and `y_pred` must each point to `n` doubles.
 */
enum CtrfStatus ctrf_r_squared(const double *y, const double *y_pred, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CTRF_H */
