#ifndef HYPERLATENT_H
#define HYPERLATENT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  HL_STATUS_OK = 0,
  HL_STATUS_NULL_POINTER = 1,
  HL_STATUS_INVALID_ARGUMENT = 2,
  HL_STATUS_OUT_OF_RANGE = 3,
  HL_STATUS_GEOMETRY = 4,
  HL_STATUS_IO = 5,
  HL_STATUS_PARSE = 6,
  HL_STATUS_VERSION_MISMATCH = 7,
  HL_STATUS_UNSHAPEABLE = 8,
  HL_STATUS_SEARCH = 9,
  HL_STATUS_NOT_AVAILABLE = 10,
  HL_STATUS_PANIC = 99,
} HlStatus;

typedef enum {
  HL_REWARD_SCHEME_POINCARE = 0,
  HL_REWARD_SCHEME_EUCLIDEAN = 1,
  HL_REWARD_SCHEME_SPARSE01 = 2,
} HlRewardScheme;

/**
 * Opaque search tree.
 */
typedef struct HlTree HlTree;

/**
 * Opaque linear value head.
 */
typedef struct HlValueHead HlValueHead;

/**
 * Search knobs exposed to C. Obtain defaults from
 * [`hl_search_params_default`].
 */
typedef struct {
  size_t num_sim;
  double exploration_c;
  double mix_eta;
  size_t prune_interval;
  double prune_ratio;
  double cluster_threshold;
  uint64_t rng_seed;
} HlSearchParams;

/**
 * Planted-path environment description. `planted_path` points to `depth`
 * child indices.
 */
typedef struct {
  size_t branching;
  size_t depth;
  const size_t *planted_path;
  double noise;
  uint64_t seed;
} HlPlantedSpec;

/**
 * Per-node statistics. `parent` is -1 for the root; `terminal_reward` and
 * `potential` are NaN when absent.
 */
typedef struct {
  int64_t parent;
  size_t depth;
  size_t child_count;
  bool enabled;
  bool is_terminal;
  double terminal_reward;
  uint64_t visits;
  double q;
  double q0;
  double prior;
  double value_pred;
  double potential;
} HlNodeInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *hl_version(void);

/**
 * Message describing the last failure on this thread, or NULL. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *hl_last_error_message(void);

/**
 * Geodesic distance between two points of the unit ball.
 *
 * # Safety
 * `u` and `v` must each point to `dim` readable doubles; `out` must be
 * writable.
 */
HlStatus hl_geodesic_distance(const double *u, const double *v, size_t dim, double *out);

/**
 * Exponential map at the origin with default stability constants.
 *
 * # Safety
 * `v` must point to `dim` readable doubles and `out` to `dim` writable ones.
 */
HlStatus hl_exp_map_origin(const double *v, size_t dim, double *out);

/**
 * Root-centred latent of a pooled vector.
 *
 * # Safety
 * `pooled` and `root` must point to `dim` readable doubles and `out` to
 * `dim` writable ones.
 */
HlStatus hl_to_latent(const double *pooled, const double *root, size_t dim, double *out);

/**
 * Value head with the given parameters. Pass NULL `weights` for an all-zero
 * head of width `dim`.
 *
 * # Safety
 * `weights`, when non-null, must point to `dim` readable doubles; `out` must
 * be writable.
 */
HlStatus hl_value_head_new(const double *weights, size_t dim, double bias, HlValueHead **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
HlStatus hl_value_head_load(const char *path, HlValueHead **out);

/**
 * # Safety
 * `head` must be a live handle and `path` a NUL-terminated string.
 */
HlStatus hl_value_head_save(const HlValueHead *head, const char *path);

/**
 * # Safety
 * `head` must be a live handle, `h` must point to `dim` readable doubles and
 * `out` must be writable.
 */
HlStatus hl_value_head_predict(const HlValueHead *head, const double *h, size_t dim, double *out);

/**
 * # Safety
 * `head` must be NULL or a handle not yet freed.
 */
void hl_value_head_free(HlValueHead *head);

HlSearchParams hl_search_params_default(void);

/**
 * Runs value-guided search on a planted-path environment. `head` may be
 * NULL, in which case an all-zero head is used.
 *
 * # Safety
 * `spec` and `params` must be valid pointers, `spec->planted_path` must
 * point to `spec->depth` indices, `head` must be NULL or live, and `out`
 * writable.
 */
HlStatus hl_planted_search(const HlPlantedSpec *spec,
                           const HlSearchParams *params,
                           const HlValueHead *head,
                           HlTree **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
HlStatus hl_tree_load(const char *path, HlTree **out);

/**
 * # Safety
 * `tree` must be a live handle and `path` a NUL-terminated string.
 */
HlStatus hl_tree_dump(const HlTree *tree, const char *path);

/**
 * Writes latents, distances to the root and the pairwise distance matrix.
 *
 * # Safety
 * `tree` must be a live handle and `path` a NUL-terminated string.
 */
HlStatus hl_tree_export_disk(const HlTree *tree, const char *path);

/**
 * # Safety
 * `tree` must be NULL or a handle not yet freed.
 */
void hl_tree_free(HlTree *tree);

/**
 * Number of nodes, or 0 for a NULL handle.
 *
 * # Safety
 * `tree` must be NULL or a live handle.
 */
size_t hl_tree_node_count(const HlTree *tree);

/**
 * Width of the tree's vectors, or 0 for a NULL handle.
 *
 * # Safety
 * `tree` must be NULL or a live handle.
 */
size_t hl_tree_hidden_dim(const HlTree *tree);

/**
 * Fraction of terminal leaves that verified correct. Returns
 * `HL_STATUS_NOT_AVAILABLE` when the tree has no terminal leaf.
 *
 * # Safety
 * `tree` must be a live handle and `out` writable.
 */
HlStatus hl_tree_success_rate(const HlTree *tree, double *out);

/**
 * # Safety
 * `tree` must be a live handle and `out` writable.
 */
HlStatus hl_tree_node_info(const HlTree *tree, size_t node, HlNodeInfo *out);

/**
 * Copies the latent of `node` into `out`, which must hold `dim` doubles.
 *
 * # Safety
 * `tree` must be a live handle and `out` must point to `dim` writable doubles.
 */
HlStatus hl_tree_node_latent(const HlTree *tree, size_t node, double *out, size_t dim);

/**
 * Annotates every node with its potential and step reward under `scheme`,
 * one of the `HlRewardScheme` values. Returns `HL_STATUS_UNSHAPEABLE` for a
 * potential scheme on a tree without a correct leaf; the tree is left
 * unchanged in that case.
 *
 * # Safety
 * `tree` must be a live handle not used concurrently.
 */
HlStatus hl_tree_shape(HlTree *tree, uint32_t scheme);

/**
 * Shaped return accumulated from the root down to `node`. Call
 * [`hl_tree_shape`] first; unshaped edges count as zero.
 *
 * # Safety
 * `tree` must be a live handle and `out` writable.
 */
HlStatus hl_tree_path_return(const HlTree *tree, size_t node, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HYPERLATENT_H */
