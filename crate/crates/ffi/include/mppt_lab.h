#ifndef MPPT_LAB_H
#define MPPT_LAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum MpptStatus {
  MPPT_STATUS_OK = 0,
  MPPT_STATUS_NULL_POINTER = 1,
  MPPT_STATUS_INVALID_INPUT = 2,
  MPPT_STATUS_SHAPE_MISMATCH = 3,
  MPPT_STATUS_NON_CONVERGENCE = 4,
  MPPT_STATUS_INSUFFICIENT_SAMPLES = 5,
  // Singular fit, diverged training, unstable model or an impossible current.
  MPPT_STATUS_NUMERICAL = 6,
  MPPT_STATUS_IO = 7,
  MPPT_STATUS_PARSE = 8,
  MPPT_STATUS_PANIC = 9,
} MpptStatus;

// Series-parallel PV array with its module datasheet.
typedef struct MpptArray MpptArray;

// Closed-loop controller driving a simulated array.
typedef struct MpptController MpptController;

// Streaming GLLR change detector on measured power.
typedef struct MpptGllr MpptGllr;

// Trained GMPP-voltage network.
typedef struct MpptModel MpptModel;

// Particle filter over the operating voltage.
typedef struct MpptSmc MpptSmc;

// Consecutive-difference threshold detector.
typedef struct MpptThreshold MpptThreshold;

// One sampling instant of a closed-loop controller.
typedef struct MpptStep {
  double t;
  double v_command;
  double v_meas;
  double i_meas;
  double p_meas;
  double g;
  bool alarm;
  bool ann_triggered;
  double v_hat;
  double v_egmpp;
  double u;
  bool latched;
} MpptStep;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer is
// valid until the next failing call on the same thread.
const char *mppt_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *mppt_version(void);

// Array of `n_groups` bypass-diode groups with `series[k]` modules each,
// repeated over `parallel` strings, built from the bundled 60 W module.
//
// # Safety
// `series` must point to `n_groups` values; `out` must be writable.
enum MpptStatus mppt_array_new(const size_t *series,
                               size_t n_groups,
                               size_t parallel,
                               struct MpptArray **out);

// Array from JSON documents of the topology and, optionally, the module
// (null selects the bundled 60 W module).
//
// # Safety
// Strings must be NUL-terminated; `out` must be writable.
enum MpptStatus mppt_array_from_json(const char *topology_json,
                                     const char *module_json,
                                     struct MpptArray **out);

// # Safety
// `array` must come from an `mppt_array_*` constructor or be null.
void mppt_array_free(struct MpptArray *array);

// # Safety
// `array` must be a live handle; `out` must be writable.
enum MpptStatus mppt_array_group_count(const struct MpptArray *array, size_t *out);

// Nameplate open-circuit voltage, V.
//
// # Safety
// `array` must be a live handle; `out` must be writable.
enum MpptStatus mppt_array_voc(const struct MpptArray *array, double *out);

// Array current at terminal voltage `v`, A.
//
// # Safety
// `irradiance` must point to one value per group (kW/m²); `out` must be writable.
enum MpptStatus mppt_array_current(const struct MpptArray *array,
                                   const double *irradiance,
                                   size_t n,
                                   double temperature_k,
                                   double v,
                                   double *out);

// Global maximum power point: voltage in V and power in W.
//
// # Safety
// `irradiance` must point to one value per group; both outputs must be writable.
enum MpptStatus mppt_array_find_gmpp(const struct MpptArray *array,
                                     const double *irradiance,
                                     size_t n,
                                     double temperature_k,
                                     double *out_v,
                                     double *out_p);

// Detector with window order `p`, noise level `sigma_nu` (W) and threshold
// `h`. A non-positive `b` selects the default drift for `p`.
//
// # Safety
// `out` must be writable.
enum MpptStatus mppt_gllr_new(double b,
                              double sigma_nu,
                              double h,
                              size_t p,
                              double nominal_power,
                              struct MpptGllr **out);

// # Safety
// `detector` must be a live handle or null.
void mppt_gllr_free(struct MpptGllr *detector);

// Feed one power sample; `out_alarm` is set when the statistic crosses `h`.
//
// # Safety
// `detector` must be a live handle; `out_alarm` must be writable.
enum MpptStatus mppt_gllr_step(struct MpptGllr *detector, double power, bool *out_alarm);

// # Safety
// `detector` must be a live handle; `out` must be writable.
enum MpptStatus mppt_gllr_statistic(const struct MpptGllr *detector, double *out);

// Restart after an alarm with the mean of `recent` as the new nominal power.
//
// # Safety
// `recent` must point to `n` values.
enum MpptStatus mppt_gllr_rebaseline(struct MpptGllr *detector,
                                     const double *recent,
                                     size_t n,
                                     uint64_t t_now);

// # Safety
// `out` must be writable.
enum MpptStatus mppt_threshold_new(double h1, struct MpptThreshold **out);

// # Safety
// `detector` must be a live handle or null.
void mppt_threshold_free(struct MpptThreshold *detector);

// # Safety
// `detector` must be a live handle; `out_alarm` must be writable.
enum MpptStatus mppt_threshold_step(struct MpptThreshold *detector, double power, bool *out_alarm);

// Filter with `n_particles` particles drawn from N(v0, sigma0²).
//
// # Safety
// `out` must be writable.
enum MpptStatus mppt_smc_new(double sigma_w,
                             double sigma_v,
                             double v0,
                             double sigma0,
                             size_t n_particles,
                             uint64_t seed,
                             struct MpptSmc **out);

// # Safety
// `filter` must be a live handle or null.
void mppt_smc_free(struct MpptSmc *filter);

// One predict-update-resample cycle. `slope` is the power slope estimate
// (W/V), `u` the refinement input and `v_egmpp` the latest predicted GMPP
// voltage. Writes the posterior mean and whether every likelihood
// underflowed.
//
// # Safety
// `filter` must be a live handle; outputs must be writable.
enum MpptStatus mppt_smc_step(struct MpptSmc *filter,
                              double slope,
                              double u,
                              double v_egmpp,
                              double v_measured,
                              double *out_estimate,
                              bool *out_collapsed);

// # Safety
// `filter` must be a live handle; `out` must be writable.
enum MpptStatus mppt_smc_effective_sample_size(const struct MpptSmc *filter, double *out);

// # Safety
// `json` must be NUL-terminated; `out` must be writable.
enum MpptStatus mppt_model_from_json(const char *json, struct MpptModel **out);

// # Safety
// `model` must be a live handle or null.
void mppt_model_free(struct MpptModel *model);

// Number of network inputs.
//
// # Safety
// `model` must be a live handle; `out` must be writable.
enum MpptStatus mppt_model_input_len(const struct MpptModel *model, size_t *out);

// Predicted GMPP voltage from per-group irradiance.
//
// # Safety
// `irradiance` must point to `n` values; `out` must be writable.
enum MpptStatus mppt_model_predict_irradiance(const struct MpptModel *model,
                                              const double *irradiance,
                                              size_t n,
                                              double *out);

// Predicted GMPP voltage from `n` probe readings `(v[k], i[k])`.
//
// # Safety
// `v` and `i` must each point to `n` values; `out` must be writable.
enum MpptStatus mppt_model_predict_probes(const struct MpptModel *model,
                                          const double *v,
                                          const double *i,
                                          size_t n,
                                          double *out);

// Controller from a JSON configuration, bound to a copy of `array` under
// the given conditions. `model` may be null for controllers without a
// network; the controller keeps its own reference to it.
//
// # Safety
// Handles must be live or null where allowed; `irradiance` must point to
// `n` values; `out` must be writable.
enum MpptStatus mppt_controller_new(const char *config_json,
                                    const struct MpptModel *model,
                                    const struct MpptArray *array,
                                    const double *irradiance,
                                    size_t n,
                                    double temperature_k,
                                    uint64_t seed,
                                    struct MpptController **out);

// # Safety
// `controller` must be a live handle or null.
void mppt_controller_free(struct MpptController *controller);

// Change the array conditions from the next step on.
//
// # Safety
// `irradiance` must point to `n` values.
enum MpptStatus mppt_controller_set_conditions(struct MpptController *controller,
                                               const double *irradiance,
                                               size_t n,
                                               double temperature_k);

// Advance one sampling instant.
//
// # Safety
// `controller` must be a live handle; `out` must be writable.
enum MpptStatus mppt_controller_step(struct MpptController *controller, struct MpptStep *out);

// Network invocations so far.
//
// # Safety
// `controller` must be a live handle; `out` must be writable.
enum MpptStatus mppt_controller_ann_calls(const struct MpptController *controller, uint64_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MPPT_LAB_H */
