#ifndef CONTRACTION_MPC_H
#define CONTRACTION_MPC_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result codes.
 */
typedef enum CmpcStatus {
  CMPC_STATUS_OK = 0,
  CMPC_STATUS_NULL_POINTER = 1,
  CMPC_STATUS_INVALID_ARGUMENT = 2,
  CMPC_STATUS_INVALID_CONFIG = 3,
  CMPC_STATUS_DISTURBANCE_TOO_LARGE = 4,
  CMPC_STATUS_CERTIFICATE_UNAVAILABLE = 5,
  CMPC_STATUS_CONTROLLER_FAULT = 6,
  CMPC_STATUS_FAILURE = 7,
  CMPC_STATUS_PANIC = 8,
} CmpcStatus;

typedef struct CmpcCertificate CmpcCertificate;

typedef struct CmpcController CmpcController;

/*
 A scenario together with its plant.
 */
typedef struct CmpcScenario CmpcScenario;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or NULL. Valid until the
 next call into this library on the same thread.
 */
const char *cmpc_last_error(void);

/*
 Free a string returned by this library.

 # Safety
 `s` must come from this library and not have been freed.
 */
void cmpc_string_free(char *s);

/*
 Built-in scenario by name. `smoke != 0` selects the reduced grids.

 # Safety
 `name` must be a NUL-terminated string; `out` must be writable.
 */
enum CmpcStatus cmpc_scenario_preset(const char *name, int32_t smoke, struct CmpcScenario **out);

/*
 Scenario from its JSON description.

 # Safety
 `json` must be a NUL-terminated string; `out` must be writable.
 */
enum CmpcStatus cmpc_scenario_from_json(const char *json, int32_t smoke, struct CmpcScenario **out);

/*
 # Safety
 `s` must come from this library and not have been freed.
 */
void cmpc_scenario_free(struct CmpcScenario *s);

/*
 State, input and disturbance dimensions.

 # Safety
 All pointers must be valid.
 */
enum CmpcStatus cmpc_scenario_dims(const struct CmpcScenario *s,
                                   uintptr_t *n,
                                   uintptr_t *m,
                                   uintptr_t *r);

/*
 One plant step `x+ = f(x, u, w)`.

 # Safety
 `x`, `out` hold `n` values, `u` holds `m`, `w` holds `r`.
 */
enum CmpcStatus cmpc_plant_step(const struct CmpcScenario *s,
                                const double *x,
                                const double *u,
                                const double *w,
                                double *out);

/*
 Tightening sequences for `j = 0..=horizon`, row-major `(horizon + 1) x n`
 into `f_out` and `r_out`; `len` is the capacity of each buffer.

 # Safety
 `f_out` and `r_out` must each hold `len` values.
 */
enum CmpcStatus cmpc_tightening(const struct CmpcScenario *s,
                                uintptr_t horizon,
                                double *f_out,
                                double *r_out,
                                uintptr_t len);

/*
 Run the certification pipeline.

 # Safety
 `s` must be valid; `out` must be writable.
 */
enum CmpcStatus cmpc_certify(const struct CmpcScenario *s, struct CmpcCertificate **out);

/*
 Load a certificate saved as JSON and check it against the scenario's plant.

 # Safety
 `json` must be a NUL-terminated string; `out` must be writable.
 */
enum CmpcStatus cmpc_certificate_from_json(const struct CmpcScenario *s,
                                           const char *json,
                                           struct CmpcCertificate **out);

/*
 Certificate as JSON; release with [`cmpc_string_free`].

 # Safety
 `c` must be valid; `out` must be writable.
 */
enum CmpcStatus cmpc_certificate_to_json(const struct CmpcCertificate *c, char **out);

/*
 Horizon, contraction factor, sublevel value and `Γ_max`.

 # Safety
 All pointers must be valid.
 */
enum CmpcStatus cmpc_certificate_summary(const struct CmpcCertificate *c,
                                         uintptr_t *n_p,
                                         double *gamma,
                                         double *omega,
                                         double *gamma_max);

/*
 # Safety
 `c` must come from this library and not have been freed.
 */
void cmpc_certificate_free(struct CmpcCertificate *c);

/*
 Controller for the scenario's settings. The certificate is copied.

 # Safety
 `s` and `c` must be valid; `out` must be writable.
 */
enum CmpcStatus cmpc_controller_new(const struct CmpcScenario *s,
                                    const struct CmpcCertificate *c,
                                    struct CmpcController **out);

/*
 Solve at state `x` (`n` values) and write the input to apply into `u`
 (`m` values). `v_star` and `theta` may be NULL.

 # Safety
 Buffers must hold `n` and `m` values.
 */
enum CmpcStatus cmpc_controller_step(struct CmpcController *ctrl,
                                     const double *x,
                                     uintptr_t n,
                                     double *u,
                                     uintptr_t m,
                                     double *v_star,
                                     double *theta);

/*
 Forget `θ` and the warm start.

 # Safety
 `ctrl` must be valid.
 */
enum CmpcStatus cmpc_controller_reset(struct CmpcController *ctrl);

/*
 # Safety
 `ctrl` must come from this library and not have been freed.
 */
void cmpc_controller_free(struct CmpcController *ctrl);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CONTRACTION_MPC_H */
