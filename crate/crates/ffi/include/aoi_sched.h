#ifndef AOI_SCHED_H
#define AOI_SCHED_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AoiStatus {
  AOI_STATUS_OK = 0,
  AOI_STATUS_NULL_POINTER = 1,
  AOI_STATUS_INVALID_ARGUMENT = 2,
  // No policy in the search space meets the AoI limits.
  AOI_STATUS_INFEASIBLE = 3,
  AOI_STATUS_NUMERICAL = 4,
  // A Rust panic was caught at the boundary.
  AOI_STATUS_PANIC = 5,
} AoiStatus;

// Scheduling instance. Create with [`aoi_config_new`].
typedef struct AoiConfig AoiConfig;

// Statistics of a finished simulation run.
typedef struct AoiSimStats AoiSimStats;

// Decision probabilities of one user under the randomized policy with
// retransmissions.
typedef struct AoiOfrpUser {
  double alpha;
  double u;
  double q;
  double u_prime;
} AoiOfrpUser;

typedef struct AoiOfrpMetrics {
  double avg_aoi;
  // Stationary probability that the cache is empty.
  double theta;
  double avg_cost;
} AoiOfrpMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failing call on this thread, or an empty string.
// The pointer stays valid until the next failing call on the same thread.
const char *aoi_last_error_message(void);

// Symmetric instance with sample cost 1, transmission cost 5, horizon 1e6,
// seed 1, V = 800 and a single transmitter.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum AoiStatus aoi_config_new(size_t num_users,
                              double success_prob,
                              double aoi_limit,
                              uint32_t aoi_cap,
                              struct AoiConfig **out);

// # Safety
// `cfg` must be null or a handle from [`aoi_config_new`] not yet freed.
void aoi_config_free(struct AoiConfig *cfg);

// Replaces one user's success probability and AoI limit.
//
// # Safety
// `cfg` must be a live config handle.
enum AoiStatus aoi_config_set_user(struct AoiConfig *cfg,
                                   size_t user,
                                   double success_prob,
                                   double aoi_limit);

// # Safety
// `cfg` must be a live config handle.
enum AoiStatus aoi_config_set_costs(struct AoiConfig *cfg,
                                    double sample_cost,
                                    double transmit_cost);

// Cost weight of the drift-plus-penalty scheduler.
//
// # Safety
// `cfg` must be a live config handle.
enum AoiStatus aoi_config_set_v(struct AoiConfig *cfg, double v);

// # Safety
// `cfg` must be a live config handle.
enum AoiStatus aoi_config_set_horizon(struct AoiConfig *cfg, uint64_t horizon, uint64_t seed);

// When false, any number of users may transmit in the same slot.
//
// # Safety
// `cfg` must be a live config handle.
enum AoiStatus aoi_config_set_single_transmitter(struct AoiConfig *cfg, bool single);

// Stationary average AoI of the fresh-only randomized policy for per-slot
// delivery probability `delta` and AoI cap `aoi_cap`.
//
// # Safety
// `out` must be writable.
enum AoiStatus aoi_forp_avg_aoi(double delta, uint32_t aoi_cap, double *out);

// Grid search with `alpha'_k = 1 / K`. Writes `phi_k` for every user into
// `phi_out` (length `len`, at least K) and the summed cost into `total_cost`.
//
// # Safety
// `cfg` must be a live handle, `phi_out` must hold `len` doubles and
// `total_cost` must be writable.
enum AoiStatus aoi_forp_optimize(const struct AoiConfig *cfg,
                                 double step,
                                 double *phi_out,
                                 size_t len,
                                 double *total_cost);

// Stationary metrics of one user under the randomized policy with
// retransmissions.
//
// # Safety
// `params` must be readable and `out` writable.
enum AoiStatus aoi_ofrp_metrics(const struct AoiOfrpUser *params,
                                double success_prob,
                                uint32_t aoi_cap,
                                double sample_cost,
                                double transmit_cost,
                                struct AoiOfrpMetrics *out);

// Grid search with `alpha_k = 1 / K`, each user optimized independently.
//
// # Safety
// `cfg` must be a live handle, `users_out` must hold `len` entries and
// `total_cost` must be writable.
enum AoiStatus aoi_ofrp_optimize(const struct AoiConfig *cfg,
                                 double step,
                                 struct AoiOfrpUser *users_out,
                                 size_t len,
                                 double *total_cost);

// Simulates the drift-plus-penalty scheduler for the configured horizon.
//
// # Safety
// `cfg` must be a live handle and `out` writable.
enum AoiStatus aoi_simulate_dpp(const struct AoiConfig *cfg, struct AoiSimStats **out);

// Simulates the fresh-only randomized policy with per-user scheduling
// probabilities `alpha_prime` and sampling probabilities `phi`, each of
// length `len` equal to K.
//
// # Safety
// `cfg` must be a live handle, the arrays must hold `len` doubles and `out`
// must be writable.
enum AoiStatus aoi_simulate_forp(const struct AoiConfig *cfg,
                                 const double *alpha_prime,
                                 const double *phi,
                                 size_t len,
                                 struct AoiSimStats **out);

// Simulates the randomized policy with retransmissions; `users` holds K
// entries.
//
// # Safety
// `cfg` must be a live handle, `users` must hold `len` entries and `out`
// must be writable.
enum AoiStatus aoi_simulate_ofrp(const struct AoiConfig *cfg,
                                 const struct AoiOfrpUser *users,
                                 size_t len,
                                 struct AoiSimStats **out);

// # Safety
// `stats` must be null or a handle from a simulate call not yet freed.
void aoi_stats_free(struct AoiSimStats *stats);

// # Safety
// `stats` must be a live handle and `out` writable.
enum AoiStatus aoi_stats_num_users(const struct AoiSimStats *stats, size_t *out);

// Time-average cost per slot.
//
// # Safety
// `stats` must be a live handle and `out` writable.
enum AoiStatus aoi_stats_avg_cost(const struct AoiSimStats *stats, double *out);

// # Safety
// `stats` must be a live handle and `out` writable.
enum AoiStatus aoi_stats_avg_aoi(const struct AoiSimStats *stats, size_t user, double *out);

// Fraction of slots in which `user` sampled.
//
// # Safety
// `stats` must be a live handle and `out` writable.
enum AoiStatus aoi_stats_sample_freq(const struct AoiSimStats *stats, size_t user, double *out);

// # Safety
// `stats` must be a live handle and `out` writable.
enum AoiStatus aoi_stats_retransmit_freq(const struct AoiSimStats *stats, size_t user, double *out);

// Time average of the user's virtual queue.
//
// # Safety
// `stats` must be a live handle and `out` writable.
enum AoiStatus aoi_stats_vqueue_mean(const struct AoiSimStats *stats, size_t user, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AOI_SCHED_H */
