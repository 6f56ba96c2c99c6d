#ifndef MSGEN_H
#define MSGEN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MsgenStatus {
  MSGEN_STATUS_OK = 0,
  MSGEN_STATUS_NULL_POINTER = 1,
  MSGEN_STATUS_INVALID_ARGUMENT = 2,
  MSGEN_STATUS_CONFIG = 3,
  MSGEN_STATUS_IO = 4,
  MSGEN_STATUS_MISSING_ARTIFACT = 5,
  MSGEN_STATUS_TRAINING = 6,
  MSGEN_STATUS_NUMERICAL = 7,
  MSGEN_STATUS_PANIC = 8,
} MsgenStatus;

typedef enum MsgenStage {
  MSGEN_STAGE_SIMULATE = 0,
  MSGEN_STAGE_FIT_PROPENSITY = 1,
  MSGEN_STAGE_TRAIN = 2,
  MSGEN_STAGE_GENERATE = 3,
  MSGEN_STAGE_EVALUATE = 4,
} MsgenStage;

typedef struct MsgenExperiment MsgenExperiment;

typedef struct MsgenModel MsgenModel;

typedef struct MsgenReport MsgenReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Most recent error message on this thread, or NULL. Valid until the next
 * failing call on the same thread.
 */
const char *msgen_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *msgen_version(void);

/**
 * Parse and validate an experiment configuration.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MsgenStatus msgen_experiment_from_json(const char *json, struct MsgenExperiment **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MsgenStatus msgen_experiment_load(const char *path, struct MsgenExperiment **out);

/**
 * # Safety
 * `exp` must come from this library.
 */
enum MsgenStatus msgen_experiment_set_seed(struct MsgenExperiment *exp, uint64_t seed);

/**
 * # Safety
 * `exp` must come from this library; `dir` must be NUL-terminated.
 */
enum MsgenStatus msgen_experiment_set_out(struct MsgenExperiment *exp, const char *dir);

/**
 * Number of evaluated treatment combinations.
 *
 * # Safety
 * `exp` must come from this library and `out` be a valid pointer.
 */
enum MsgenStatus msgen_experiment_combo_count(const struct MsgenExperiment *exp, size_t *out);

/**
 * Run one stage against the artifacts already in the output directory.
 *
 * # Safety
 * `exp` must come from this library.
 */
enum MsgenStatus msgen_experiment_run_stage(const struct MsgenExperiment *exp,
                                            enum MsgenStage stage);

/**
 * Run every stage and return the metrics.
 *
 * # Safety
 * `exp` must come from this library and `out` be a valid pointer.
 */
enum MsgenStatus msgen_experiment_run(const struct MsgenExperiment *exp, struct MsgenReport **out);

/**
 * # Safety
 * `exp` must come from this library or be NULL; it is invalid afterwards.
 */
void msgen_experiment_free(struct MsgenExperiment *exp);

/**
 * Read a `metrics.json` written by the evaluate stage.
 *
 * # Safety
 * `path` must be NUL-terminated and `out` a valid pointer.
 */
enum MsgenStatus msgen_report_load(const char *path, struct MsgenReport **out);

/**
 * Average and worst value of `metric` ("mean_dist", "w1" or "fid_star")
 * for `method`.
 *
 * # Safety
 * Strings must be NUL-terminated; `avg` and `worst` valid pointers.
 */
enum MsgenStatus msgen_report_aggregate(const struct MsgenReport *report,
                                        const char *method,
                                        const char *metric,
                                        double *avg,
                                        double *worst);

/**
 * The report as JSON; release the string with [`msgen_string_free`].
 *
 * # Safety
 * `report` must come from this library and `out` be a valid pointer.
 */
enum MsgenStatus msgen_report_to_json(const struct MsgenReport *report, char **out);

/**
 * # Safety
 * `report` must come from this library or be NULL.
 */
void msgen_report_free(struct MsgenReport *report);

/**
 * # Safety
 * `s` must come from this library or be NULL.
 */
void msgen_string_free(char *s);

/**
 * Load a trained method from `models/<label>.json`.
 *
 * # Safety
 * `path` must be NUL-terminated and `out` a valid pointer.
 */
enum MsgenStatus msgen_model_load(const char *path, struct MsgenModel **out);

/**
 * Treatment-window length `d`.
 *
 * # Safety
 * `model` must come from this library or be NULL.
 */
size_t msgen_model_history_len(const struct MsgenModel *model);

/**
 * Outcome dimension `m`.
 *
 * # Safety
 * `model` must come from this library or be NULL.
 */
size_t msgen_model_outcome_dim(const struct MsgenModel *model);

/**
 * Draw `n` outcomes for the treatment window `a_bar` (oldest first, 0/1
 * entries) into `out`, row-major `n × m`. `out_len` must be at least `n·m`.
 *
 * # Safety
 * `a_bar` must hold `d` bytes and `out` `out_len` doubles.
 */
enum MsgenStatus msgen_model_sample(const struct MsgenModel *model,
                                    const uint8_t *a_bar,
                                    size_t d,
                                    size_t n,
                                    uint64_t seed,
                                    double *out,
                                    size_t out_len);

/**
 * # Safety
 * `model` must come from this library or be NULL.
 */
void msgen_model_free(struct MsgenModel *model);

/**
 * 1-Wasserstein distance between two empirical samples on the line.
 *
 * # Safety
 * `a` and `b` must hold `na` and `nb` doubles; `out` must be valid.
 */
enum MsgenStatus msgen_wasserstein1(const double *a,
                                    size_t na,
                                    const double *b,
                                    size_t nb,
                                    double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MSGEN_H */
