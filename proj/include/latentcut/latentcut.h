#ifndef LATENTCUT_H
#define LATENTCUT_H

/* C interface to the latentcut engine. Objects are opaque handles owned by
 * the caller and released with the matching *_free function. Every call
 * returning lc_status records a message retrievable with lc_last_error()
 * on failure; the message is per thread. */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(LATENTCUT_BUILDING_LIBRARY)
#    define LC_API __declspec(dllexport)
#  else
#    define LC_API __declspec(dllimport)
#  endif
#else
#  define LC_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum lc_status {
  LC_OK = 0,
  LC_INPUT_ERROR = 1,      /* unreadable or invalid files, specs, options */
  LC_INFERENCE_ERROR = 2,  /* numerical failure */
  LC_INVALID_ARGUMENT = 3, /* null handles, out-of-range indices */
  LC_INTERNAL_ERROR = 4
} lc_status;

typedef struct lc_model lc_model;
typedef struct lc_fit lc_fit;
typedef struct lc_cut lc_cut;

LC_API const char* lc_version(void);
LC_API const char* lc_last_error(void);
LC_API const char* lc_status_name(lc_status status);

/* 0 quiet, 1 warnings (default), 2 progress, 3 debug traces; to stderr. */
LC_API void lc_set_verbosity(int level);

/* Models. */
LC_API lc_status lc_model_load(const char* spec_path, const char* data_path, lc_model** out);
LC_API lc_status lc_model_from_strings(const char* spec_json, const char* data_csv, const char* base_dir,
                                       lc_model** out);
LC_API lc_status lc_model_load_rats(lc_model** out);
LC_API void lc_model_free(lc_model* model);
LC_API int lc_model_n_rows(const lc_model* model);
LC_API int lc_model_latent_dim(const lc_model* model);
LC_API int lc_model_theta_dim(const lc_model* model);
/* Grouping column named in the spec, or NULL. */
LC_API const char* lc_model_group(const lc_model* model);

/* Fit: hyperparameter and latent posterior summaries. */
LC_API lc_status lc_fit_run(const lc_model* model, lc_fit** out);
LC_API void lc_fit_free(lc_fit* fit);
LC_API size_t lc_fit_n_hyper(const lc_fit* fit);
LC_API size_t lc_fit_n_latent(const lc_fit* fit);
LC_API lc_status lc_fit_hyper(const lc_fit* fit, size_t k, const char** name, double* mode, double* mean,
                              double* sd);
LC_API lc_status lc_fit_latent(const lc_fit* fit, size_t k, const char** name, double* mean, double* sd);
LC_API double lc_fit_seconds(const lc_fit* fit);
/* format is "csv" or "json"; path NULL or "-" writes to standard output. */
LC_API lc_status lc_fit_write(const lc_fit* fit, const char* path, const char* format);

/* Node split by group. threads < 1 means one. */
LC_API lc_status lc_cut_run(const lc_model* model, const char* group, double q, int threads, lc_cut** out);
LC_API void lc_cut_free(lc_cut* cut);
LC_API size_t lc_cut_n_groups(const lc_cut* cut);
LC_API size_t lc_cut_n_failures(const lc_cut* cut);
/* Failed groups report failed = 1 and NaN numbers; rank is then -1. */
LC_API lc_status lc_cut_group(const lc_cut* cut, size_t j, const char** label, double* delta_hat, int* rank,
                              double* p_value, int* flagged, int* failed);
LC_API const char* lc_cut_group_error(const lc_cut* cut, size_t j);
LC_API double lc_cut_fit_seconds(const lc_cut* cut);
LC_API double lc_cut_split_seconds(const lc_cut* cut);
/* full != 0 adds mu(delta) and Sigma(delta) to JSON output. */
LC_API lc_status lc_cut_write(const lc_cut* cut, const char* path, const char* format, int full);

/* Synthetic lattice: writes data.csv, graph.adj and model.json into dir. */
LC_API lc_status lc_gen_lattice(int side, int periods, uint64_t seed, const char* dir);

#ifdef __cplusplus
}
#endif

#endif
