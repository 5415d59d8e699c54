#ifndef HETNET_H
#define HETNET_H

#include <stdbool.h>
#include <stddef.h>

typedef enum HetnetStatus {
  HETNET_STATUS_OK = 0,
  HETNET_STATUS_NULL_POINTER = 1,
  HETNET_STATUS_INVALID_ARGUMENT = 2,
  HETNET_STATUS_INFEASIBLE = 3,
  HETNET_STATUS_CONVERGENCE_FAILURE = 4,
  HETNET_STATUS_BUFFER_TOO_SMALL = 5,
  HETNET_STATUS_OUT_OF_RANGE = 6,
  HETNET_STATUS_CONFIG_ERROR = 7,
  HETNET_STATUS_PANIC = 99,
} HetnetStatus;

typedef enum HetnetMethod {
  HETNET_METHOD_AUTO = 0,
  HETNET_METHOD_CLOSED_FORM = 1,
  HETNET_METHOD_NUMERICAL = 2,
} HetnetMethod;

/**
 * Network parameters plus an ordered tier list.
 */
typedef struct HetnetModel HetnetModel;

typedef struct HetnetOptimum HetnetOptimum;

typedef struct HetnetReport HetnetReport;

/**
 * Per-tier analytic values. `delay_bound` is +infinity for an unstable tier.
 */
typedef struct HetnetTierReport {
  double association_prob;
  double rate_bps;
  double service_rate;
  double traffic_intensity;
  double sir_coverage;
  double delay_bound;
  bool stable;
} HetnetTierReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Static description of a status code. Never NULL.
 */
const char *hetnet_status_string(enum HetnetStatus status);

/**
 * Message for the last failure on this thread. Valid until the next failing
 * call on the same thread.
 */
const char *hetnet_last_error(void);

/**
 * # Safety
 * `out` must be valid for one write.
 */
enum HetnetStatus hetnet_compute_z(double tau, double alpha, double *out);

/**
 * Creates a model with no tiers.
 *
 * # Safety
 * `out` must be valid for one write.
 */
enum HetnetStatus hetnet_model_new(double user_intensity,
                                   double arrival_rate,
                                   double mean_packet_length,
                                   double sir_threshold,
                                   double alpha,
                                   struct HetnetModel **out);

/**
 * Loads network and tier blocks from a TOML scenario file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid for one write.
 */
enum HetnetStatus hetnet_model_from_config(const char *path, struct HetnetModel **out);

/**
 * # Safety
 * `model` must come from a `hetnet_model_*` constructor and not be freed yet.
 * NULL is ignored.
 */
void hetnet_model_free(struct HetnetModel *model);

/**
 * Appends a tier. Power in watts, bandwidth in Hz, bias linear.
 *
 * # Safety
 * `model` must be a live model handle.
 */
enum HetnetStatus hetnet_model_add_tier(struct HetnetModel *model,
                                        double lambda,
                                        double power_w,
                                        double bandwidth_hz,
                                        double bias);

/**
 * # Safety
 * `model` must be a live model handle.
 */
enum HetnetStatus hetnet_model_set_arrival_rate(struct HetnetModel *model, double arrival_rate);

/**
 * # Safety
 * `model` must be a live model handle and `k` a valid tier index.
 */
enum HetnetStatus hetnet_model_set_bias(struct HetnetModel *model, size_t k, double bias);

/**
 * # Safety
 * `model` must be a live model handle; `out` valid for one write.
 */
enum HetnetStatus hetnet_model_tier_count(const struct HetnetModel *model, size_t *out);

/**
 * Writes one association probability per tier into `out[0..len)`.
 *
 * # Safety
 * `model` must be a live model handle; `out` valid for `len` writes.
 */
enum HetnetStatus hetnet_association_probability(const struct HetnetModel *model,
                                                 double *out,
                                                 size_t len);

/**
 * # Safety
 * `model` must be a live model handle; `out` valid for one write.
 */
enum HetnetStatus hetnet_analyze(const struct HetnetModel *model, struct HetnetReport **out);

/**
 * # Safety
 * `report` must come from [`hetnet_analyze`] and not be freed yet. NULL is
 * ignored.
 */
void hetnet_report_free(struct HetnetReport *report);

/**
 * # Safety
 * `report` must be a live report handle; `out` valid for one write.
 */
enum HetnetStatus hetnet_report_tier_count(const struct HetnetReport *report, size_t *out);

/**
 * # Safety
 * `report` must be a live report handle; `out` valid for one write.
 */
enum HetnetStatus hetnet_report_tier(const struct HetnetReport *report,
                                     size_t k,
                                     struct HetnetTierReport *out);

/**
 * Network delay bound (+infinity when some tier is unstable) and SIR
 * coverage. Either out pointer may be NULL.
 *
 * # Safety
 * `report` must be a live report handle.
 */
enum HetnetStatus hetnet_report_network(const struct HetnetReport *report,
                                        double *delay_bound,
                                        double *sir_coverage);

/**
 * Delay-optimal association. Biases are normalised to tier 0.
 *
 * # Safety
 * `model` must be a live model handle; `out` valid for one write.
 */
enum HetnetStatus hetnet_optimize(const struct HetnetModel *model,
                                  enum HetnetMethod method,
                                  struct HetnetOptimum **out);

/**
 * # Safety
 * `optimum` must come from [`hetnet_optimize`] and not be freed yet. NULL is
 * ignored.
 */
void hetnet_optimum_free(struct HetnetOptimum *optimum);

/**
 * # Safety
 * `optimum` must be a live optimum handle; `out` valid for one write.
 */
enum HetnetStatus hetnet_optimum_tier_count(const struct HetnetOptimum *optimum, size_t *out);

/**
 * # Safety
 * `optimum` must be a live optimum handle; `out` valid for `len` writes.
 */
enum HetnetStatus hetnet_optimum_association(const struct HetnetOptimum *optimum,
                                             double *out,
                                             size_t len);

/**
 * Linear biases; shut-down tiers report 0.
 *
 * # Safety
 * `optimum` must be a live optimum handle; `out` valid for `len` writes.
 */
enum HetnetStatus hetnet_optimum_bias(const struct HetnetOptimum *optimum, double *out, size_t len);

/**
 * # Safety
 * `optimum` must be a live optimum handle; `out` valid for one write.
 */
enum HetnetStatus hetnet_optimum_delay(const struct HetnetOptimum *optimum, double *out);

/**
 * Method actually used: `ClosedForm` or `Numerical`.
 *
 * # Safety
 * `optimum` must be a live optimum handle; `out` valid for one write.
 */
enum HetnetStatus hetnet_optimum_method(const struct HetnetOptimum *optimum,
                                        enum HetnetMethod *out);

/**
 * # Safety
 * `optimum` must be a live optimum handle; `out` valid for one write.
 */
enum HetnetStatus hetnet_optimum_residual(const struct HetnetOptimum *optimum, double *out);

/**
 * # Safety
 * `optimum` must be a live optimum handle; `out` valid for one write.
 */
enum HetnetStatus hetnet_optimum_is_shutdown(const struct HetnetOptimum *optimum,
                                             size_t k,
                                             bool *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HETNET_H */
