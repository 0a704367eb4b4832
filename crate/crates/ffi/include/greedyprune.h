#ifndef GREEDYPRUNE_H
#define GREEDYPRUNE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

#define GP_OK 0

// A required pointer argument was null.
#define GP_ERR_NULL 1

#define GP_ERR_CONFIG 2

#define GP_ERR_DATA 3

#define GP_ERR_LEARNER 4

// The library panicked; the handle arguments are left untouched.
#define GP_ERR_PANIC 5

// The caller's buffer is smaller than the reported size.
#define GP_ERR_BUFFER 6

// Opaque fitted ensemble.
typedef struct GpModel GpModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *gp_version(void);

// Copies the calling thread's last error message into `buf`. Returns
// `GP_ERR_BUFFER` (with `needed` set) when `cap` is too small.
//
// # Safety
// `buf` must be valid for `cap` bytes or null; `needed` must be null or valid.
int32_t gp_last_error(char *buf, size_t cap, size_t *needed);

// Fits a recipe (`rf`, `bp_boost`, `booging`, `bp_mars`, `marsquake`) or a
// single base learner (`tree`, `boosting`, `mars`, `greedy_ls`, `ols`).
// `settings` is null or a `;`-separated list of `key=value` overrides.
//
// # Safety
// `x` must hold `n_rows * n_cols` doubles and `y` `n_rows`; strings must be
// NUL-terminated; `out` must be valid for one pointer write.
int32_t gp_fit(const double *x,
               size_t n_rows,
               size_t n_cols,
               const double *y,
               const char *recipe,
               const char *settings,
               uint64_t seed,
               struct GpModel **out);

// Writes one prediction per row of `x` into `out`.
//
// # Safety
// `model` must come from this library; `x` must hold `n_rows * n_cols`
// doubles and `out` room for `n_rows`.
int32_t gp_predict(const struct GpModel *model,
                   const double *x,
                   size_t n_rows,
                   size_t n_cols,
                   double *out);

// Number of feature columns the model expects, or 0 for a null handle.
//
// # Safety
// `model` must be null or come from this library.
size_t gp_model_n_features(const struct GpModel *model);

// Serialises the model as JSON into `buf` (see `gp_last_error` for the
// buffer protocol).
//
// # Safety
// `model` must come from this library; `buf` valid for `cap` bytes or null;
// `needed` null or valid.
int32_t gp_model_to_json(const struct GpModel *model, char *buf, size_t cap, size_t *needed);

// Restores a model written by `gp_model_to_json` or the command line.
//
// # Safety
// `json` must be NUL-terminated; `out` valid for one pointer write.
int32_t gp_model_from_json(const char *json, struct GpModel **out);

// Releases a model; null is ignored.
//
// # Safety
// `model` must be null or an unfreed handle from this library.
void gp_model_free(struct GpModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GREEDYPRUNE_H */
