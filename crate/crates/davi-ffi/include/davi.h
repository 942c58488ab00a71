/* C interface of the davi amortized inverse-problem sampler. */

#ifndef DAVI_H
#define DAVI_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes of every FFI entry point.
typedef enum DaviStatus {
  DAVI_STATUS_OK = 0,
  DAVI_STATUS_NULL_POINTER = 1,
  DAVI_STATUS_INVALID_UTF8 = 2,
  DAVI_STATUS_INVALID_ARGUMENT = 3,
  DAVI_STATUS_JSON_ERROR = 4,
  DAVI_STATUS_IO_ERROR = 5,
  DAVI_STATUS_NUMERIC_ERROR = 6,
  DAVI_STATUS_DIMENSION_MISMATCH = 7,
  DAVI_STATUS_SELF_CHECK_FAILED = 8,
  DAVI_STATUS_INTERNAL_ERROR = 9,
} DaviStatus;

// A trained restoration model: the amortized map plus the schedule and
// measurement operator it was trained with.
typedef struct DaviModel DaviModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the most recent error on this thread. The pointer stays valid
// until the next failing call on the same thread; never free it.
const char *davi_last_error(void);

// Trains and evaluates per an experiment config given as a JSON string,
// writing checkpoint, metrics and report files into `out_dir`.
//
// # Safety
// `config_json` and `out_dir` must be valid NUL-terminated C strings.
enum DaviStatus davi_run_experiment(const char *config_json, const char *out_dir);

// Runs the built-in oracle and identity checks.
enum DaviStatus davi_check(uint64_t seed);

// Loads a checkpoint written by training. On success `*out` owns the model;
// release it with [`davi_model_free`].
//
// # Safety
// `path` must be a valid NUL-terminated C string and `out` a valid pointer.
enum DaviStatus davi_model_load(const char *path, struct DaviModel **out);

// # Safety
// `model` must be a pointer returned by [`davi_model_load`] that has not
// been freed; null is ignored.
void davi_model_free(struct DaviModel *model);

// Signal dimension of restored outputs (0 for a null model).
//
// # Safety
// `model` must be null or a live pointer from [`davi_model_load`].
uintptr_t davi_model_signal_dim(const struct DaviModel *model);

// Measurement dimension the model expects (0 for a null model).
//
// # Safety
// `model` must be null or a live pointer from [`davi_model_load`].
uintptr_t davi_model_measurement_dim(const struct DaviModel *model);

// Number of network evaluations the model has performed so far.
//
// # Safety
// `model` must be null or a live pointer from [`davi_model_load`].
uint64_t davi_model_nfe(const struct DaviModel *model);

// Draws one posterior sample for a measurement in a single network
// evaluation. `y` holds `y_len` doubles; the restored signal is written to
// `out` (`out_len` must equal the signal dimension). Distinct seeds give
// independent posterior samples.
//
// # Safety
// `y` and `out` must point to readable/writable buffers of the stated
// lengths, and `model` must be a live pointer from [`davi_model_load`].
enum DaviStatus davi_model_restore(const struct DaviModel *model,
                                   const double *y,
                                   uintptr_t y_len,
                                   uint64_t seed,
                                   double *out,
                                   uintptr_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DAVI_H */
