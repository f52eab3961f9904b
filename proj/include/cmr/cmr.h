/* C interface to the multi-source causal effect estimator.
 *
 * Every function returns a cmr_status; on failure cmr_last_error() gives a
 * message for the calling thread. Strings returned through char** are
 * owned by the caller and released with cmr_string_free(). */
#ifndef CMR_H
#define CMR_H

#include <stddef.h>

#if defined(_WIN32)
#  if defined(CMR_BUILDING_LIBRARY)
#    define CMR_API __declspec(dllexport)
#  else
#    define CMR_API __declspec(dllimport)
#  endif
#else
#  define CMR_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum cmr_status {
    CMR_OK = 0,
    CMR_ERR_VALIDATION = 2,
    CMR_ERR_NUMERICAL = 3,
    CMR_ERR_USAGE = 64,
    CMR_ERR_INTERNAL = 70,
    CMR_ERR_IO = 74
} cmr_status;

enum { CMR_TABLE_A0 = 0, CMR_TABLE_A1 = 1, CMR_TABLE_DIF = 2 };

typedef struct cmr_result cmr_result;

/* One row of a result table. String members point into the result and stay
 * valid until cmr_result_free(). */
typedef struct cmr_row {
    const char* target;     /* source label, or "external" */
    const char* subgroup;   /* "" for ATE rows */
    double estimate;
    double se;
    double ci_lower;
    double ci_upper;
    int has_scb;
    double scb_lower;
    double scb_upper;
} cmr_row;

CMR_API const char* cmr_version(void);
CMR_API const char* cmr_last_error(void);
CMR_API int cmr_available_workers(void);
CMR_API void cmr_string_free(char* s);

/* Sets a dotted key ("learners.outcome.candidates=[\"glm\"]") in a JSON
 * config document and returns the updated document. */
CMR_API cmr_status cmr_config_set(const char* config_json, const char* assignment, char** out_json);

/* Runs an analysis ("ate-internal", "ate-external", "ste-internal",
 * "ste-external"). Relative paths in the config resolve against base_dir
 * (NULL = current directory). workers <= 0 uses every available core. */
CMR_API cmr_status cmr_run(const char* command, const char* config_json, const char* base_dir, int workers,
                           cmr_result** out);

CMR_API void cmr_result_free(cmr_result* result);
CMR_API cmr_status cmr_result_json(const cmr_result* result, char** out);
CMR_API cmr_status cmr_result_summary(const cmr_result* result, char** out);
CMR_API cmr_status cmr_result_forest_svg(const cmr_result* result, int use_scb, int sort, char** out);
CMR_API size_t cmr_result_rows(const cmr_result* result, int table);
CMR_API cmr_status cmr_result_row(const cmr_result* result, int table, size_t index, cmr_row* out);

/* Writes the configured outputs; *out_paths (optional) receives the written
 * paths separated by newlines. */
CMR_API cmr_status cmr_result_write(const cmr_result* result, char** out_paths);

/* Runs the simulator described by the config's "simulate" block. */
CMR_API cmr_status cmr_simulate(const char* config_json, const char* base_dir, int workers, char** out_paths);

CMR_API cmr_status cmr_wald_ci(double estimate, double se, double level, double* lower, double* upper);

#ifdef __cplusplus
}
#endif

#endif
