#ifndef FRAMING_H
#define FRAMING_H

#include <stdbool.h>
#include <stddef.h>

// Result codes. Values match the command-line exit codes where they overlap.
typedef enum FdiStatus {
  FDI_STATUS_OK = 0,
  // Malformed case data, meter list or argument.
  FDI_STATUS_INVALID_INPUT = 2,
  // The request has no solution, e.g. an unobservable network or an empty attack space.
  FDI_STATUS_INFEASIBLE = 3,
  // A numerical routine failed.
  FDI_STATUS_NUMERICAL = 4,
  // A required pointer was null.
  FDI_STATUS_NULL_POINTER = 5,
  // An output buffer is too small.
  FDI_STATUS_BUFFER_TOO_SMALL = 6,
  // An unexpected internal failure.
  FDI_STATUS_INTERNAL = 7,
} FdiStatus;

// A parsed network with the full meter layout (an injection meter at every
// bus, a flow meter at both ends of every line).
typedef struct FdiNetwork FdiNetwork;

// A framing attack plan designed on a particular network.
typedef struct FdiPlan FdiPlan;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failure on this thread, or null if none occurred.
// The pointer stays valid until the next failing call on the same thread.
const char *fdi_last_error(void);

// Parses IEEE Common Data Format text into a new network.
//
// # Safety
// `text` must be a NUL-terminated string and `out` a valid pointer.
enum FdiStatus fdi_network_from_cdf(const char *text, struct FdiNetwork **out);

// Loads a bundled case (`"ieee14"` or `"ieee118"`).
//
// # Safety
// `name` must be a NUL-terminated string and `out` a valid pointer.
enum FdiStatus fdi_network_builtin(const char *name, struct FdiNetwork **out);

// Releases a network. Null is ignored.
//
// # Safety
// `net` must come from this library and must not be used afterwards.
void fdi_network_free(struct FdiNetwork *net);

// Number of buses, or 0 for a null handle.
//
// # Safety
// `net` must be null or a live network handle.
size_t fdi_network_bus_count(const struct FdiNetwork *net);

// Number of merged lines, or 0 for a null handle.
//
// # Safety
// `net` must be null or a live network handle.
size_t fdi_network_line_count(const struct FdiNetwork *net);

// Number of meters in the full layout, or 0 for a null handle.
//
// # Safety
// `net` must be null or a live network handle.
size_t fdi_network_meter_count(const struct FdiNetwork *net);

// Number of state variables (bus angles other than the reference), or 0
// for a null handle.
//
// # Safety
// `net` must be null or a live network handle.
size_t fdi_network_state_dim(const struct FdiNetwork *net);

// Whether the full meter layout makes the state observable.
//
// # Safety
// `net` must be a live network handle and `out` a valid pointer.
enum FdiStatus fdi_network_observable(const struct FdiNetwork *net, bool *out);

// Sets uniform meter noise so that every meter has the given SNR in dB
// relative to the RMS of the nominal measurements.
//
// # Safety
// `net` must be a live network handle.
enum FdiStatus fdi_network_set_snr(struct FdiNetwork *net, double snr_db);

// Designs the optimal framing direction for adversary meters `adversary`
// and framed meters `framed`, both given as meter lists such as
// `"2-3,3-4,4-3"` (injection at a bus: `"3"`, flow from bus 3 to 2: `"3-2"`).
// The plan starts with `eta = 1`.
//
// # Safety
// `net` must be a live network handle, the strings NUL-terminated and `out`
// a valid pointer.
enum FdiStatus fdi_design_framing(const struct FdiNetwork *net,
                                  const char *adversary,
                                  const char *framed,
                                  struct FdiPlan **out);

// Releases a plan. Null is ignored.
//
// # Safety
// `plan` must come from this library and must not be used afterwards.
void fdi_plan_free(struct FdiPlan *plan);

// Value of the framing objective at the unit direction, or NaN for null.
//
// # Safety
// `plan` must be null or a live plan handle.
double fdi_plan_objective(const struct FdiPlan *plan);

// Dimension of the feasible attack subspace, or 0 for null.
//
// # Safety
// `plan` must be null or a live plan handle.
size_t fdi_plan_feasible_dim(const struct FdiPlan *plan);

// Attack scale `eta`, or NaN for null.
//
// # Safety
// `plan` must be null or a live plan handle.
double fdi_plan_eta(const struct FdiPlan *plan);

// Sets the attack scale. Its sign orients the attack.
//
// # Safety
// `plan` must be a live plan handle.
enum FdiStatus fdi_plan_set_eta(struct FdiPlan *plan, double eta);

// Copies the attack vector `eta * direction` (one entry per meter) into
// `out`. `written` receives the required length even when the buffer is
// too small.
//
// # Safety
// `plan` must be a live plan handle; `out` must hold `capacity` doubles;
// `written` may be null.
enum FdiStatus fdi_plan_attack_vector(const struct FdiPlan *plan,
                                      double *out,
                                      size_t capacity,
                                      size_t *written);

// Noiseless prediction of the state-estimate change the plan causes after
// bad-data removal, one entry per state variable (radians).
//
// # Safety
// `net` and `plan` must be live handles; `out` must hold `capacity`
// doubles; `written` may be null.
enum FdiStatus fdi_predict_perturbation(const struct FdiNetwork *net,
                                        const struct FdiPlan *plan,
                                        double *out,
                                        size_t capacity,
                                        size_t *written);

// DC weighted least-squares estimation with iterative bad-data removal at
// false-alarm rate `alpha`. `z` holds one measurement per meter in the full
// layout; `x_out` receives the final estimate (one entry per state
// variable). `removed` (optional) receives the number of meters removed.
//
// # Safety
// `net` must be a live handle; `z` must hold `z_len` doubles; `x_out` must
// hold `capacity` doubles; `written` and `removed` may be null.
enum FdiStatus fdi_estimate_dc(const struct FdiNetwork *net,
                               const double *z,
                               size_t z_len,
                               double alpha,
                               double *x_out,
                               size_t capacity,
                               size_t *written,
                               size_t *removed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FRAMING_H */
