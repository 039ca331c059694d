#ifndef PACBAYES_H
#define PACBAYES_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PbStatus {
  PB_OK = 0,
  PB_NULL_POINTER = 1,
  PB_INVALID_ARGUMENT = 2,
  PB_RESOURCE_LIMIT = 3,
  PB_PARSE_ERROR = 4,
  PB_IO_ERROR = 5,
  PB_PANIC = 6,
} PbStatus;

typedef enum PbFamily {
  PB_MCALLESTER = 0,
  PB_CATONI = 1,
  PB_KST = 2,
  PB_MATCHED_CATONI = 3,
  PB_FLATNESS = 4,
} PbFamily;

typedef enum PbRule {
  /**
   * The instance's own posterior.
   */
  PB_RULE_FIXED = 0,
  /**
   * `q ∝ p exp(-beta m R_S)`.
   */
  PB_RULE_GIBBS = 1,
  /**
   * Bound minimization with the library's default β-grid.
   */
  PB_RULE_MINIMIZER = 2,
} PbRule;

/**
 * A data distribution, loss table, prior and optional posterior.
 */
typedef struct PbInstance PbInstance;

/**
 * A probability vector over hypotheses.
 */
typedef struct PbMeasure PbMeasure;

/**
 * A training sample of point indices.
 */
typedef struct PbSample PbSample;

/**
 * Bound parameters. A NaN `c2` selects the family default.
 */
typedef struct PbParams {
  double delta;
  double catoni_c;
  double c;
  double c2;
  double h;
} PbParams;

/**
 * `value = empirical + flatness + complexity`. `rate_constant` is NaN for
 * families without one.
 */
typedef struct PbBoundReport {
  enum PbFamily family;
  double value;
  double empirical;
  double flatness;
  double complexity;
  double rate_constant;
} PbBoundReport;

typedef struct PbCoverageReport {
  uint64_t trials;
  uint64_t violations;
  double violation_rate;
  double clopper_pearson_upper;
  double mean_slack;
  double min_slack;
} PbCoverageReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL after a success.
 * The pointer stays valid until the next `pb_*` call on the same thread.
 */
const char *pb_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pb_version(void);

struct PbParams pb_params_default(void);

/**
 * Builds an instance from a row-major `hypotheses x points` loss array.
 * `prior` and `posterior` may be NULL (uniform prior, no posterior).
 *
 * # Safety
 * Array arguments must point to at least the stated number of doubles.
 */
enum PbStatus pb_instance_new(const double *point_probs,
                              size_t points,
                              const double *losses,
                              size_t hypotheses,
                              const double *prior,
                              const double *posterior,
                              struct PbInstance **out_instance);

/**
 * Parses an instance from its text form.
 *
 * # Safety
 * `text` must be a NUL-terminated string.
 */
enum PbStatus pb_instance_parse(const char *text, struct PbInstance **out_instance);

/**
 * Loads an instance file.
 *
 * # Safety
 * `path` must be a NUL-terminated string.
 */
enum PbStatus pb_instance_load(const char *path, struct PbInstance **out_instance);

/**
 * # Safety
 * `instance` must be NULL or a handle from this library, freed at most once.
 */
void pb_instance_free(struct PbInstance *instance);

/**
 * # Safety
 * `instance` must be a valid handle.
 */
size_t pb_instance_hypothesis_count(const struct PbInstance *instance);

/**
 * # Safety
 * `instance` must be a valid handle.
 */
size_t pb_instance_point_count(const struct PbInstance *instance);

/**
 * Copies the instance's prior into a new measure handle.
 *
 * # Safety
 * `instance` must be a valid handle.
 */
enum PbStatus pb_instance_prior(const struct PbInstance *instance, struct PbMeasure **out_measure);

/**
 * Copies the instance's posterior; fails with `PB_INVALID_ARGUMENT` when it has none.
 *
 * # Safety
 * `instance` must be a valid handle.
 */
enum PbStatus pb_instance_posterior(const struct PbInstance *instance,
                                    struct PbMeasure **out_measure);

/**
 * # Safety
 * `weights` must point to `len` doubles.
 */
enum PbStatus pb_measure_new(const double *weights, size_t len, struct PbMeasure **out_measure);

/**
 * # Safety
 * `measure` must be NULL or a handle from this library, freed at most once.
 */
void pb_measure_free(struct PbMeasure *measure);

/**
 * # Safety
 * `measure` must be a valid handle.
 */
size_t pb_measure_len(const struct PbMeasure *measure);

/**
 * Copies the weights into `buf`, which must hold `pb_measure_len` doubles.
 *
 * # Safety
 * `buf` must point to `len` writable doubles.
 */
enum PbStatus pb_measure_weights(const struct PbMeasure *measure, double *buf, size_t len);

/**
 * Draws `m` i.i.d. points from the instance's data distribution.
 *
 * # Safety
 * `instance` must be a valid handle.
 */
enum PbStatus pb_sample_draw(const struct PbInstance *instance,
                             size_t m,
                             uint64_t seed,
                             struct PbSample **out_sample);

/**
 * A sample from explicit point indices.
 *
 * # Safety
 * `indices` must point to `len` values.
 */
enum PbStatus pb_sample_new(const size_t *indices, size_t len, struct PbSample **out_sample);

/**
 * # Safety
 * `sample` must be NULL or a handle from this library, freed at most once.
 */
void pb_sample_free(struct PbSample *sample);

/**
 * # Safety
 * `sample` must be a valid handle.
 */
size_t pb_sample_len(const struct PbSample *sample);

/**
 * KL(q || p); `+inf` when q puts mass outside the support of p.
 *
 * # Safety
 * Handles must be valid.
 */
enum PbStatus pb_kl_divergence(const struct PbMeasure *q,
                               const struct PbMeasure *p,
                               double *out_value);

/**
 * Exact Gibbs risk of `q` under the instance's data distribution.
 *
 * # Safety
 * Handles must be valid.
 */
enum PbStatus pb_gibbs_risk(const struct PbInstance *instance,
                            const struct PbMeasure *q,
                            double *out_value);

/**
 * # Safety
 * Handles must be valid.
 */
enum PbStatus pb_gibbs_empirical_risk(const struct PbInstance *instance,
                                      const struct PbMeasure *q,
                                      const struct PbSample *sample,
                                      double *out_value);

/**
 * h-flatness of `q` on the sample, `h` in `(0, 1]`.
 *
 * # Safety
 * Handles must be valid.
 */
enum PbStatus pb_flatness(const struct PbInstance *instance,
                          const struct PbMeasure *q,
                          const struct PbSample *sample,
                          double h,
                          double *out_value);

/**
 * Evaluates a bound from sufficient statistics. `flatness` is only read by
 * the flatness family; pass NaN otherwise.
 *
 * # Safety
 * Pointers must be valid.
 */
enum PbStatus pb_bound_evaluate(enum PbFamily family_id,
                                const struct PbParams *params,
                                double emp,
                                double kl,
                                size_t m,
                                double flatness,
                                struct PbBoundReport *out_report);

/**
 * Evaluates a bound for posterior `q` against prior `p` on a sample.
 *
 * # Safety
 * Handles and pointers must be valid.
 */
enum PbStatus pb_bound_posterior(enum PbFamily family_id,
                                 const struct PbParams *params,
                                 const struct PbInstance *instance,
                                 const struct PbMeasure *q,
                                 const struct PbMeasure *p,
                                 const struct PbSample *sample,
                                 struct PbBoundReport *out_report);

/**
 * Coverage experiment against the instance's prior. `beta` is read by the
 * Gibbs rule only.
 *
 * # Safety
 * Handles and pointers must be valid.
 */
enum PbStatus pb_coverage(const struct PbInstance *instance,
                          enum PbFamily family_id,
                          const struct PbParams *params,
                          enum PbRule rule,
                          double beta,
                          size_t m,
                          uint64_t trials,
                          uint64_t seed,
                          struct PbCoverageReport *out_report);

/**
 * One-sided Clopper–Pearson upper limit for `k` successes in `n` trials.
 *
 * # Safety
 * `out_value` must be valid.
 */
enum PbStatus pb_clopper_pearson_upper(uint64_t k,
                                       uint64_t n,
                                       double confidence,
                                       double *out_value);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PACBAYES_H */
