#ifndef SCM_ACTIVE_H
#define SCM_ACTIVE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

// Result codes. Zero is success.
typedef enum ScmStatus {
  SCM_STATUS_OK = 0,
  SCM_STATUS_NULL_POINTER = 1,
  SCM_STATUS_INVALID_UTF8 = 2,
  SCM_STATUS_CONFIG = 3,
  SCM_STATUS_INVALID_ARGUMENT = 4,
  SCM_STATUS_ILL_CONDITIONED = 5,
  SCM_STATUS_POLICY_MISMATCH = 6,
  SCM_STATUS_IO = 7,
  SCM_STATUS_PANIC = 8,
} ScmStatus;

// A GP belief over the structural functions of one experiment's graph.
typedef struct ScmBelief ScmBelief;

// A validated experiment: true model, prior, candidates, policies.
typedef struct ScmExperiment ScmExperiment;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failure on this thread; empty if none. Owned by the
// library and valid until the next failing call on this thread.
const char *scm_last_error(void);

// Library version as a static NUL-terminated string.
const char *scm_version(void);

// Parses and validates a TOML experiment config.
//
// # Safety
// `toml` must be a NUL-terminated string; `out` must be writable.
enum ScmStatus scm_experiment_from_toml(const char *toml, struct ScmExperiment **out);

// # Safety
// `e` must come from `scm_experiment_from_toml` and not be used afterwards.
void scm_experiment_free(struct ScmExperiment *e);

// Number of nodes of the experiment's graph (0 for a null handle).
//
// # Safety
// `e` must be null or a live handle.
uintptr_t scm_experiment_node_count(const struct ScmExperiment *e);

// Number of candidate interventions (0 for a null handle).
//
// # Safety
// `e` must be null or a live handle.
uintptr_t scm_experiment_candidate_count(const struct ScmExperiment *e);

// Runs every configured policy and trial, writing `trace.csv` and
// `summary.csv` into `out_dir` (created if missing).
//
// # Safety
// `e` must be a live handle and `out_dir` a NUL-terminated path.
enum ScmStatus scm_experiment_run(const struct ScmExperiment *e, const char *out_dir);

// Draws one sample of the true model under candidate `candidate`, or under
// no intervention when `candidate == SIZE_MAX`. `x` receives one value per
// node.
//
// # Safety
// `e` must be a live handle; `x` must hold `len` doubles.
enum ScmStatus scm_experiment_sample(const struct ScmExperiment *e,
                                     uintptr_t candidate,
                                     uint64_t seed,
                                     double *x,
                                     uintptr_t len);

// Creates the no-data belief of an experiment.
//
// # Safety
// `e` must be a live handle; `out` must be writable.
enum ScmStatus scm_belief_new(const struct ScmExperiment *e, struct ScmBelief **out);

// # Safety
// `b` must come from `scm_belief_new` and not be used afterwards.
void scm_belief_free(struct ScmBelief *b);

// Number of draws the belief has absorbed (0 for a null handle).
//
// # Safety
// `b` must be null or a live handle.
uintptr_t scm_belief_draw_count(const struct ScmBelief *b);

// Adds one joint sample `x` (one value per node) taken under the
// intervention clamping `clamp_nodes[k]` to `clamp_values[k]`. Clamped
// coordinates of `x` must equal their clamp values.
//
// # Safety
// `b` must be a live handle; the arrays must hold the stated lengths.
enum ScmStatus scm_belief_add_draw(struct ScmBelief *b,
                                   const uintptr_t *clamp_nodes,
                                   const double *clamp_values,
                                   uintptr_t n_clamps,
                                   const double *x,
                                   uintptr_t len);

// Posterior mean and variance of the structural function of `node` at
// parent values `x` (`len` = number of parents).
//
// # Safety
// `b` must be a live handle; `x` must hold `len` doubles; outputs writable.
enum ScmStatus scm_belief_posterior(const struct ScmBelief *b,
                                    uintptr_t node,
                                    const double *x,
                                    uintptr_t len,
                                    double *mean,
                                    double *var);

// Expected total risk of the posterior-mean estimate, and the true total
// risk against the experiment's ground truth.
//
// # Safety
// Handles must be live and belong together; outputs writable.
enum ScmStatus scm_belief_risks(const struct ScmExperiment *e,
                                const struct ScmBelief *b,
                                double *expected,
                                double *truth);

// Chooses the next candidate with `policy` ("observe", "random",
// "sampling", "dp_upstream", "dp_single"). `index` receives the candidate
// index, or `SIZE_MAX` when the policy only observes.
//
// # Safety
// Handles must be live; `policy` NUL-terminated; `index` writable.
enum ScmStatus scm_select(const struct ScmExperiment *e,
                          const struct ScmBelief *b,
                          const char *policy,
                          uint64_t seed,
                          uintptr_t *index);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SCM_ACTIVE_H */
