/* C interface to the drcusum library.
 *
 * Every fallible call returns a drc_status. On failure the message is
 * available from drc_last_error() on the calling thread until the next call.
 * Strings and arrays returned through out-parameters are owned by the caller
 * and released with drc_string_free / drc_doubles_free.
 */
#ifndef DRCUSUM_H
#define DRCUSUM_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define DRC_API __declspec(dllexport)
#else
#define DRC_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum drc_status {
    DRC_OK = 0,
    DRC_INVALID_ARGUMENT = 1,
    DRC_DIMENSION_MISMATCH = 2,
    DRC_DATA = 3,
    DRC_SOLVER = 4,
    DRC_NOT_CONVERGED = 5,
    DRC_IO = 6,
    DRC_INTERNAL = 7
} drc_status;

typedef struct drc_model drc_model;
typedef struct drc_scorer drc_scorer;
typedef struct drc_detector drc_detector;
typedef struct drc_csv drc_csv;

DRC_API const char* drc_version(void);
DRC_API const char* drc_last_error(void);
DRC_API const char* drc_status_name(drc_status status);
DRC_API void drc_string_free(char* s);
DRC_API void drc_doubles_free(double* p);

/* Pre-change models from the compact grammar, e.g. "gaussian:mu=0,sigma=1",
 * "diag:mu=0|0,var=1|2", "beta:a=2,b=3", "empirical:<csv path>". */
DRC_API drc_status drc_model_parse(const char* spec, drc_model** out);
DRC_API size_t drc_model_dim(const drc_model* model);
DRC_API drc_status drc_model_to_json(const drc_model* model, char** out_json);
DRC_API void drc_model_free(drc_model* model);

/* Whole numeric CSV file as a row-major rows x dim array. */
DRC_API drc_status drc_csv_read_file(const char* path, double** out_data, size_t* out_rows, size_t* out_dim);

/* Incremental CSV reader over a file path, or standard input when path is
 * NULL or "-". drc_csv_next sets *has_row to 0 at end of input. */
DRC_API drc_status drc_csv_open(const char* path, drc_csv** out);
DRC_API drc_status drc_csv_next(drc_csv* csv, double* row, size_t capacity, size_t* out_dim, int* has_row);
DRC_API size_t drc_csv_line(const drc_csv* csv);
DRC_API void drc_csv_close(drc_csv* csv);

/* Least-favorable distribution fit. options_json may be NULL or an object
 * with any of: tol, max_iterations, lambda0, method ("auto", "analytic",
 * "quadrature", "samples"), mc_size, mc_seed, quad_tol.
 * A solve that stops at the iteration cap still returns the scorer together
 * with DRC_NOT_CONVERGED. */
DRC_API drc_status drc_lfd_fit(const drc_model* pre, const double* samples, size_t rows, size_t dim, double radius,
                               double order_s, const char* options_json, drc_scorer** out);
DRC_API drc_status drc_scorer_from_json(const char* json, drc_scorer** out);
DRC_API drc_status drc_scorer_to_json(const drc_scorer* scorer, char** out_json);
/* {dual_value, lambda, iterations, converged, stop, radius, order_s, n} */
DRC_API drc_status drc_scorer_summary(const drc_scorer* scorer, char** out_json);
DRC_API size_t drc_scorer_dim(const drc_scorer* scorer);
DRC_API drc_status drc_scorer_llr(const drc_scorer* scorer, const double* x, size_t dim, double* out);
DRC_API void drc_scorer_free(drc_scorer* scorer);

/* Multi-scenario CuSum detector; scenarios are numbered 1..m in order. */
DRC_API double drc_threshold_for_gamma(double gamma, size_t scenarios);
DRC_API drc_status drc_detector_new(const drc_scorer* const* scorers, size_t m, double threshold,
                                    drc_detector** out);
DRC_API drc_status drc_detector_step(drc_detector* detector, const double* x, size_t dim, int* out_stopped);
/* {stopped, steps, stopping_time, argmax_scenario, final_stats, threshold};
 * stopping_time and argmax_scenario are null until the detector stops. */
DRC_API drc_status drc_detector_report(const drc_detector* detector, char** out_json);
DRC_API void drc_detector_free(drc_detector* detector);

/* Experiment recipe (config schema in docs/config.schema.json). Writes the
 * OC or KL CSV depending on the config's kind. */
DRC_API drc_status drc_experiment_run(const char* config_json, char** out_csv);
/* The config with every default filled in. */
DRC_API drc_status drc_experiment_normalize(const char* config_json, char** out_json);

/* Monte-Carlo requests. The request is an object with
 *   scorers: [scorer documents], pre: model spec, post: model spec (wadd),
 *   thresholds: [b...] (mtfa/wadd), trials, cap, seed, threads;
 * calibrate additionally takes target and bracket [lo, hi].
 * Results are JSON objects. */
DRC_API drc_status drc_sim_mtfa(const char* request_json, char** out_json);
DRC_API drc_status drc_sim_wadd(const char* request_json, char** out_json);
DRC_API drc_status drc_calibrate(const char* request_json, char** out_json);

/* Radius report. Request fields: delta, order_s, tc (number, or "auto" to use
 * the pre-change model's constant), and n or train (CSV path, needs pre).
 * W_s(P, Q) comes from wpq, or is estimated from pre and post by sampling;
 * without either, upper and n_min are null. mc_size and seed control the
 * sampling estimates. */
DRC_API drc_status drc_radius_report(const char* request_json, char** out_json);

#ifdef __cplusplus
}
#endif

#endif /* DRCUSUM_H */
