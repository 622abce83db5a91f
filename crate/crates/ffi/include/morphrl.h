#ifndef MORPHRL_H
#define MORPHRL_H

#include <stddef.h>
#include <stdint.h>

// Width of a joint description vector.
#define MR_DESC_DIM 20

// Width of an actor joint observation.
#define MR_OBS_DIM 4

// Width of a critic joint observation.
#define MR_CRITIC_OBS_DIM 5

// Width of the general observation.
#define MR_GEN_DIM 13

typedef enum MrStatus {
  MR_STATUS_OK = 0,
  MR_STATUS_NULL_POINTER = 1,
  MR_STATUS_INVALID_ARGUMENT = 2,
  MR_STATUS_PARSE = 3,
  MR_STATUS_IO = 4,
  MR_STATUS_SHAPE = 5,
  MR_STATUS_NUMERIC = 6,
  MR_STATUS_PANIC = 7,
} MrStatus;

// One environment of a robot at a fixed curriculum level. Episodes reset
// automatically, with a newly sampled embodiment.
typedef struct MrEnv MrEnv;

// A parsed base morphology.
typedef struct MrMorphology MrMorphology;

// A policy loaded from a checkpoint or freshly initialized.
typedef struct MrPolicy MrPolicy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call on the same thread.
const char *mr_last_error_message(void);

// Parses morphology text.
//
// # Safety
// `text` must be a NUL-terminated string; `out` must be writable.
enum MrStatus mr_morphology_parse(const char *text, struct MrMorphology **out);

// Reads and parses a morphology file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum MrStatus mr_morphology_load(const char *path, struct MrMorphology **out);

// One of the bundled templates, by name.
//
// # Safety
// `name` must be a NUL-terminated string; `out` must be writable.
enum MrStatus mr_morphology_template(const char *name, struct MrMorphology **out);

// Number of joints, or 0 for a null handle.
//
// # Safety
// `m` must be null or a live handle.
size_t mr_morphology_num_joints(const struct MrMorphology *m);

// Writes the canonical text form into `buf` (NUL-terminated) and its length
// without the terminator into `len_out`. When `capacity` is too small
// nothing is written except `len_out` and `InvalidArgument` is returned.
//
// # Safety
// `m` must be a live handle; `buf` must hold `capacity` bytes or be null
// when `capacity` is 0; `len_out` must be writable.
enum MrStatus mr_morphology_serialize(const struct MrMorphology *m,
                                      char *buf,
                                      size_t capacity,
                                      size_t *len_out);

// # Safety
// `m` must be null or a handle not yet freed.
void mr_morphology_free(struct MrMorphology *m);

// A freshly initialized policy with the default widths.
//
// # Safety
// `out` must be writable.
enum MrStatus mr_policy_new(uint64_t seed, struct MrPolicy **out);

// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum MrStatus mr_policy_load(const char *path, struct MrPolicy **out);

// # Safety
// `p` must be a live handle; `path` must be a NUL-terminated string.
enum MrStatus mr_policy_save(const struct MrPolicy *p, const char *path);

// Action mean and standard deviation for one robot state.
//
// `descriptions` holds `num_joints * MR_DESC_DIM` values, `joint_obs`
// `num_joints * MR_OBS_DIM`, `general_obs` `MR_GEN_DIM`; `mu_out` and
// `sigma_out` receive `num_joints` values each. `robot_index` selects the
// head of a multi-head policy and is ignored otherwise.
//
// # Safety
// All pointers must be valid for the stated lengths.
enum MrStatus mr_policy_act(const struct MrPolicy *p,
                            size_t robot_index,
                            size_t num_joints,
                            const double *descriptions,
                            const double *joint_obs,
                            const double *general_obs,
                            double *mu_out,
                            double *sigma_out);

// Critic value for one robot state; `joint_obs` holds
// `num_joints * MR_CRITIC_OBS_DIM` values.
//
// # Safety
// All pointers must be valid for the stated lengths.
enum MrStatus mr_policy_value(const struct MrPolicy *p,
                              size_t robot_index,
                              size_t num_joints,
                              const double *descriptions,
                              const double *joint_obs,
                              const double *general_obs,
                              double *value_out);

// # Safety
// `p` must be null or a handle not yet freed.
void mr_policy_free(struct MrPolicy *p);

// A single environment at curriculum level `beta` in [0, 1], with default
// settings. The same seed gives the same trajectory for the same actions.
//
// # Safety
// `m` must be a live handle; `out` must be writable.
enum MrStatus mr_env_new(const struct MrMorphology *m,
                         double beta,
                         uint64_t seed,
                         struct MrEnv **out);

// Returns the environment to its initial state.
//
// # Safety
// `e` must be a live handle.
enum MrStatus mr_env_reset(struct MrEnv *e);

// # Safety
// `e` must be null or a live handle.
size_t mr_env_num_joints(const struct MrEnv *e);

// Current policy inputs: `descriptions` (`J * MR_DESC_DIM`), `joint_obs`
// (`J * MR_OBS_DIM`) and `general_obs` (`MR_GEN_DIM`).
//
// # Safety
// All pointers must be valid for the stated lengths.
enum MrStatus mr_env_observe(const struct MrEnv *e,
                             double *descriptions,
                             double *joint_obs,
                             double *general_obs);

// Applies `J` actions. `done_out` is set to 1 when the episode ended; the
// environment has then already been reset.
//
// # Safety
// `actions` must hold `J` values; `reward_out` and `done_out` must be writable.
enum MrStatus mr_env_step(struct MrEnv *e,
                          const double *actions,
                          double *reward_out,
                          int32_t *done_out);

// # Safety
// `e` must be null or a handle not yet freed.
void mr_env_free(struct MrEnv *e);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MORPHRL_H */
