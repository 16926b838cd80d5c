#ifndef TEACHABLE_H
#define TEACHABLE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TchEnvKind {
  TCH_ENV_KIND_GRIDHOME = 0,
  TCH_ENV_KIND_COURIER = 1,
} TchEnvKind;

/**
 * Result code of every fallible call.
 */
typedef enum TchStatus {
  TCH_STATUS_OK = 0,
  TCH_STATUS_NULL_POINTER = 1,
  TCH_STATUS_INVALID_ARGUMENT = 2,
  TCH_STATUS_IO = 3,
  TCH_STATUS_MODEL = 4,
  TCH_STATUS_ENV = 5,
  TCH_STATUS_POLICY = 6,
  TCH_STATUS_BUFFER_TOO_SMALL = 7,
  TCH_STATUS_PANIC = 8,
} TchStatus;

/**
 * A trained agent loaded from a checkpoint.
 */
typedef struct TchAgent TchAgent;

/**
 * One running episode: environment state plus the history an agent sees.
 */
typedef struct TchEpisode TchEpisode;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *tch_version(void);

/**
 * Copies the calling thread's last error message into `buf`.
 *
 * # Safety
 * `buf` must be valid for `buf_len` bytes or null; `out_len` null or valid.
 */
enum TchStatus tch_last_error_message(char *buf, uintptr_t buf_len, uintptr_t *out_len);

/**
 * Starts an episode of `kind` with default settings from `seed`.
 *
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
enum TchStatus tch_episode_new(enum TchEnvKind kind, uint64_t seed, struct TchEpisode **out);

/**
 * Releases an episode; null is ignored.
 *
 * # Safety
 * `ep` must come from `tch_episode_new` and not be used afterwards.
 */
void tch_episode_free(struct TchEpisode *ep);

/**
 * Number of discrete actions; indices are `0..count`.
 *
 * # Safety
 * `ep` must be a live episode and `out` valid.
 */
enum TchStatus tch_episode_action_count(struct TchEpisode *ep, uintptr_t *out);

/**
 * Name of action `index`, e.g. `"left"` or `"pedal"`.
 *
 * # Safety
 * `ep` must be a live episode; `buf`/`out_len` as in `tch_last_error_message`.
 */
enum TchStatus tch_episode_action_name(struct TchEpisode *ep,
                                       uintptr_t index,
                                       char *buf,
                                       uintptr_t buf_len,
                                       uintptr_t *out_len);

/**
 * Task description text given to the agent before the first step.
 *
 * # Safety
 * `ep` must be a live episode; `buf`/`out_len` as in `tch_last_error_message`.
 */
enum TchStatus tch_episode_task_text(struct TchEpisode *ep,
                                     char *buf,
                                     uintptr_t buf_len,
                                     uintptr_t *out_len);

/**
 * Sets the feedback utterance the agent sees at the current step.
 *
 * # Safety
 * `ep` must be a live episode and `text` a NUL-terminated string.
 */
enum TchStatus tch_episode_set_feedback(struct TchEpisode *ep, const char *text);

/**
 * Applies action `index`. `out_reward` and `out_done` may be null.
 *
 * # Safety
 * `ep` must be a live episode; output pointers null or valid.
 */
enum TchStatus tch_episode_step(struct TchEpisode *ep,
                                uintptr_t index,
                                double *out_reward,
                                bool *out_done);

/**
 * Whether the episode has ended.
 *
 * # Safety
 * `ep` must be a live episode and `out` valid.
 */
enum TchStatus tch_episode_is_done(struct TchEpisode *ep, bool *out);

/**
 * The privileged expert's next action index from the current state.
 *
 * # Safety
 * `ep` must be a live episode and `out` valid.
 */
enum TchStatus tch_episode_expert_action(struct TchEpisode *ep, uintptr_t *out);

/**
 * Loads a checkpoint as a greedy agent.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid handle slot.
 */
enum TchStatus tch_agent_load(const char *path, struct TchAgent **out);

/**
 * Releases an agent; null is ignored.
 *
 * # Safety
 * `agent` must come from `tch_agent_load` and not be used afterwards.
 */
void tch_agent_free(struct TchAgent *agent);

/**
 * The agent's action index for the episode's current step.
 *
 * # Safety
 * Both handles must be live and `out` valid.
 */
enum TchStatus tch_agent_act(struct TchAgent *agent, struct TchEpisode *ep, uintptr_t *out);

/**
 * Hashed sentence embedding of width `dim` written into `out`.
 *
 * # Safety
 * `text` must be NUL-terminated and `out` valid for `dim` doubles.
 */
enum TchStatus tch_embed(const char *text, uintptr_t dim, double *out);

/**
 * `reward * expert_steps / max(steps, expert_steps)`.
 *
 * # Safety
 * `out` must be valid.
 */
enum TchStatus tch_path_weighted_reward(double reward,
                                        uintptr_t steps,
                                        uintptr_t expert_steps,
                                        double *out);

/**
 * Number of actions for an environment kind, without an episode.
 */
uintptr_t tch_action_count(enum TchEnvKind kind);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TEACHABLE_H */
