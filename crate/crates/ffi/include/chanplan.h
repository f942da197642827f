#ifndef CHANPLAN_H
#define CHANPLAN_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdint.h>
#include <stddef.h>

// Result of every fallible call.
typedef enum CpStatus {
  CP_STATUS_OK = 0,
  // A required pointer argument was null.
  CP_STATUS_NULL_ARGUMENT = 1,
  // A string argument was not valid UTF-8.
  CP_STATUS_INVALID_UTF8 = 2,
  CP_STATUS_PARSE = 3,
  CP_STATUS_INFEASIBLE = 4,
  CP_STATUS_CONSTRAINT = 5,
  CP_STATUS_DOMAIN = 6,
  CP_STATUS_PROVIDER = 7,
  CP_STATUS_IO = 8,
  // The library panicked; the handle arguments should not be reused.
  CP_STATUS_INTERNAL = 9,
} CpStatus;

// A validated architecture graph.
typedef struct CpModel CpModel;

// A finished allocation plan.
typedef struct CpPlan CpPlan;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Parses a model document (UTF-8 JSON) into a new handle stored in `*out`.
//
// # Safety
// `json` must be a nul-terminated string and `out` a valid pointer.
enum CpStatus cp_model_parse(const char *json, struct CpModel **out);

// Releases a model. Null is ignored.
//
// # Safety
// `model` must come from [`cp_model_parse`] and not be freed twice.
void cp_model_free(struct CpModel *model);

// Total FLOPs (multiply-accumulates) of the unpruned model.
//
// # Safety
// `model` must be a live handle and `out` a valid pointer.
enum CpStatus cp_model_flops(const struct CpModel *model, uint64_t *out);

// Number of layers with a channel count (conv and linear).
//
// # Safety
// `model` must be a live handle and `out` a valid pointer.
enum CpStatus cp_model_num_prunable(const struct CpModel *model, uintptr_t *out);

// Layer groups as JSON, `{"groups": [{"spatial", "layers", "channels"}, ...]}`.
// Free the string with [`cp_string_free`].
//
// # Safety
// `model` must be a live handle and `out` a valid pointer.
enum CpStatus cp_model_groups_json(const struct CpModel *model, char **out);

// Plans a pruned configuration for `target_flops` from a stats document.
//
// `policy` is one of `importance_guided`, `winner_take_all`, `uniform`,
// `random`; null selects `importance_guided`. Every round reuses the same
// statistics.
//
// # Safety
// `model` must be a live handle, `stats_json` and (if non-null) `policy`
// nul-terminated strings, and `out` a valid pointer.
enum CpStatus cp_plan_create(const struct CpModel *model,
                             const char *stats_json,
                             uint64_t target_flops,
                             double lambda,
                             const char *policy,
                             uint32_t rounds,
                             uint64_t seed,
                             struct CpPlan **out);

// Releases a plan. Null is ignored.
//
// # Safety
// `plan` must come from [`cp_plan_create`] and not be freed twice.
void cp_plan_free(struct CpPlan *plan);

// FLOPs of the planned configuration.
//
// # Safety
// `plan` must be a live handle and `out` a valid pointer.
enum CpStatus cp_plan_achieved_flops(const struct CpPlan *plan, uint64_t *out);

// Budget left unspent by the plan.
//
// # Safety
// `plan` must be a live handle and `out` a valid pointer.
enum CpStatus cp_plan_surplus_flops(const struct CpPlan *plan, uint64_t *out);

// Planned width of one layer, or [`CpStatus::Domain`] for an unknown name.
//
// # Safety
// `plan` must be a live handle, `layer` a nul-terminated string and `out`
// a valid pointer.
enum CpStatus cp_plan_layer_channels(const struct CpPlan *plan, const char *layer, uintptr_t *out);

// The full plan document as pretty-printed JSON. Free the string with
// [`cp_string_free`].
//
// # Safety
// `plan` must be a live handle and `out` a valid pointer.
enum CpStatus cp_plan_to_json(const struct CpPlan *plan, char **out);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not be freed twice.
void cp_string_free(char *s);

// Message for the last failed call on this thread, or an empty string.
// The pointer stays valid until the next library call on the same thread.
const char *cp_last_error_message(void);

// Static name of a status code.
const char *cp_status_name(enum CpStatus status);

// Library version, e.g. `0.1.0`.
const char *cp_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CHANPLAN_H */
