#ifndef RNAS_RNAS_H
#define RNAS_RNAS_H

/* C interface to the rnas library. All functions return an rnas_status; on
 * failure rnas_last_error() describes the problem. Strings returned through
 * char** out-parameters are owned by the caller and released with
 * rnas_string_free. JSON arguments may be NULL or "" for defaults. */

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define RNAS_API __declspec(dllexport)
#else
#define RNAS_API __attribute__((visibility("default")))
#endif

typedef enum rnas_status {
  RNAS_OK = 0,
  RNAS_ERR_USAGE = 1,   /* bad arguments or configuration */
  RNAS_ERR_DATA = 2,    /* unreadable or malformed input */
  RNAS_ERR_NUMERIC = 3, /* NaN/Inf, divergence */
  RNAS_ERR_INTERNAL = 4
} rnas_status;

typedef enum rnas_precision { RNAS_SINGLE = 0, RNAS_DOUBLE = 1 } rnas_precision;

typedef struct rnas_genotype rnas_genotype;
typedef struct rnas_dataset rnas_dataset;
typedef struct rnas_model rnas_model;

/* Receives one JSON object per event (epoch finished, run finished). */
typedef void (*rnas_progress_fn)(const char* event_json, void* user);

RNAS_API const char* rnas_version(void);
/* Message for the last failure on the calling thread. */
RNAS_API const char* rnas_last_error(void);
RNAS_API void rnas_string_free(char* s);
/* Writes to path.tmp, then renames over path. */
RNAS_API rnas_status rnas_write_file_atomic(const char* path, const char* data, size_t size);

/* ---- genotypes ---- */
RNAS_API rnas_status rnas_genotype_sample(uint64_t seed, rnas_genotype** out);
RNAS_API rnas_status rnas_genotype_builtin(const char* name, rnas_genotype** out);
RNAS_API rnas_status rnas_genotype_parse(const char* text, rnas_genotype** out);
RNAS_API rnas_status rnas_genotype_load(const char* path, rnas_genotype** out);
RNAS_API rnas_status rnas_genotype_save(const rnas_genotype* g, const char* path);
RNAS_API rnas_status rnas_genotype_text(const rnas_genotype* g, char** out);
/* {"normal": {"max_pool": n, ..., "unique": u}, "reduce": {...}} */
RNAS_API rnas_status rnas_genotype_stats(const rnas_genotype* g, char** json_out);
/* JSON array of builtin names. */
RNAS_API rnas_status rnas_genotype_builtin_names(char** json_out);
RNAS_API void rnas_genotype_free(rnas_genotype* g);

/* ---- datasets ---- */
/* Container file, or CSV when the path ends in ".csv". num_classes 0 infers. */
RNAS_API rnas_status rnas_dataset_load(const char* path, size_t num_classes, rnas_dataset** out);
/* {"samples", "classes", "size", "noise", "seed"} */
RNAS_API rnas_status rnas_dataset_synthetic(const char* options_json, rnas_dataset** out);
RNAS_API rnas_status rnas_dataset_save(const rnas_dataset* d, const char* path);
/* {"samples", "shape", "num_classes", "pixel_dtype", "name"} */
RNAS_API rnas_status rnas_dataset_info(const rnas_dataset* d, char** json_out);
RNAS_API void rnas_dataset_free(rnas_dataset* d);

/* ---- models ---- */
/* network_json: {"num_cells", "init_channels", "num_classes", "input_shape"} */
RNAS_API rnas_status rnas_network_create(const rnas_genotype* g, const char* network_json, uint64_t seed,
                                         rnas_precision precision, rnas_model** out);
/* Trains a single network in place. train_json: trainer settings. */
RNAS_API rnas_status rnas_network_train(rnas_model* m, const rnas_dataset* data, const char* train_json,
                                        rnas_progress_fn progress, void* user, char** log_json);
/* request_json: {"partition": [..], "total_cells", "total_epochs", "network": {..}, "train": {..}, "seed"} */
RNAS_API rnas_status rnas_ensemble_sample_spec(const char* request_json, char** spec_json);
RNAS_API rnas_status rnas_ensemble_build(const char* spec_json, const rnas_dataset* data, rnas_precision precision,
                                         size_t threads, rnas_progress_fn progress, void* user, rnas_model** out,
                                         char** log_json);
/* Reads a network checkpoint or an ensemble container in its stored precision. */
RNAS_API rnas_status rnas_model_load(const char* path, rnas_model** out);
RNAS_API rnas_status rnas_model_save(const rnas_model* m, const char* path);
/* {"kind": "network"|"ensemble", "precision", "params", "spec": {..}} */
RNAS_API rnas_status rnas_model_info(const rnas_model* m, char** json_out);
RNAS_API void rnas_model_free(rnas_model* m);

/* ---- evaluation ---- */
RNAS_API rnas_status rnas_clean_accuracy(const rnas_model* m, const rnas_dataset* data, size_t k, double* out);
/* attack_json: {"kind", "epsilon", "step_size", "iterations", "random_start"} or a name.
 * eval_json: {"batch_size", "seed", "threads"} */
RNAS_API rnas_status rnas_adversarial_accuracy(const rnas_model* m, const rnas_dataset* data, const char* attack_json,
                                               const char* eval_json, double* out);
RNAS_API rnas_status rnas_transfer_eval(const rnas_model* source, const rnas_model* target, const rnas_dataset* data,
                                        const char* attack_json, const char* eval_json, double* out);
/* The attacked copy of `data`. */
RNAS_API rnas_status rnas_attack(const rnas_model* m, const rnas_dataset* data, const char* attack_json,
                                 const char* eval_json, rnas_dataset** out);
/* Clean accuracy plus one adversarial accuracy per attack, as a report JSON. */
RNAS_API rnas_status rnas_evaluate(const rnas_model* m, const rnas_dataset* data, const char* model_id,
                                   const char* attacks_json, const char* eval_json, char** report_json);
/* Repeated sample-train-ensemble runs. train/test may both be NULL for
 * per-seed synthetic data. reports_json receives a JSON array of reports. */
RNAS_API rnas_status rnas_experiment_run(const char* config_json, const rnas_dataset* train, const rnas_dataset* test,
                                         rnas_precision precision, size_t threads, rnas_progress_fn progress,
                                         void* user, char** result_json, char** reports_json);
/* A config section with every default filled in. section is one of
 * "network", "train", "attack", "attacks", "eval", "experiment", "synthetic". */
RNAS_API rnas_status rnas_config_resolve(const char* section, const char* config_json, char** resolved_json);

/* ---- metrics ---- */
RNAS_API rnas_status rnas_hrs(double clean, double pgd, double* out);
RNAS_API rnas_status rnas_pp_hrs(double hrs, double baseline_params, double model_params, double* out);
RNAS_API rnas_status rnas_epoch_budget(size_t num_cells, size_t total_cells, size_t total_epochs, size_t* out);
/* reports_json: JSON array of reports. With assign_pp_hrs != 0, pp_hrs is
 * filled against the smallest model first. */
RNAS_API rnas_status rnas_reports_csv(const char* reports_json, int assign_pp_hrs, char** csv_out);

#ifdef __cplusplus
}
#endif

#endif
