#ifndef COVIEW_COVIEW_H
#define COVIEW_COVIEW_H

/* C interface to the coview library.
 *
 * Every call returns a coview_status; on failure coview_last_error() holds a
 * message for the calling thread until its next failing call. Strings returned
 * through char** are owned by the caller and released with coview_string_free.
 * Configurations travel as JSON text; missing keys take their defaults. */

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(__GNUC__)
#define COVIEW_API __attribute__((visibility("default")))
#else
#define COVIEW_API
#endif

typedef enum coview_status {
  COVIEW_OK = 0,
  COVIEW_E_PARAMETER = 1,  /* argument outside its domain */
  COVIEW_E_SHAPE = 2,      /* size mismatch */
  COVIEW_E_CONFIG = 3,     /* invalid configuration */
  COVIEW_E_INTEGRITY = 4,  /* on-disk data failed a consistency check */
  COVIEW_E_IO = 5,
  COVIEW_E_LOOKUP = 6,     /* unknown id or name */
  COVIEW_E_EMPTY_DATA = 7,
  COVIEW_E_GENERATION = 8, /* scene cannot be generated as specified */
  COVIEW_E_ABORTED = 9,    /* an epoch callback asked to stop */
  COVIEW_E_INTERNAL = 10
} coview_status;

typedef struct coview_dataset coview_dataset;
typedef struct coview_model coview_model;

COVIEW_API const char* coview_version(void);
COVIEW_API const char* coview_status_name(coview_status status);
COVIEW_API const char* coview_last_error(void);
COVIEW_API void coview_string_free(char* s);

/* Parses, validates and re-serialises a configuration with every default made
 * explicit. kind: "dataset", "model", "train" or "eval". json may be NULL. */
COVIEW_API coview_status coview_resolve_config(const char* kind, const char* json, char** out);

/* Training hyper-parameters of a preset ("desk" or "paper") for a stage
 * ("fcn" or "joint"). */
COVIEW_API coview_status coview_train_preset(const char* preset, const char* stage, char** out);

/* ---- datasets ---- */

/* Renders a dataset to out_dir (manifest.json plus PNG/flow files). config is
 * a dataset configuration (NULL = defaults); seed replaces its seed. The
 * manifest text is returned through manifest when non-NULL. */
COVIEW_API coview_status coview_generate(const char* config, uint64_t seed, const char* out_dir,
                                         char** manifest);

/* Loads a dataset directory, checking every referenced file. */
COVIEW_API coview_status coview_dataset_open(const char* dir, coview_dataset** out);
COVIEW_API coview_status coview_dataset_manifest(const coview_dataset* data, char** out);
COVIEW_API void coview_dataset_free(coview_dataset* data);

/* ---- models ---- */

COVIEW_API coview_status coview_model_create(const char* config, uint64_t seed,
                                             coview_model** out);
COVIEW_API coview_status coview_model_load(const char* checkpoint, coview_model** out);
/* Copies the segmentation-network weights of any checkpoint carrying them
 * (stage-(a) initialisation and externally converted weights). */
COVIEW_API coview_status coview_model_init_weights(coview_model* model, const char* checkpoint);
/* meta: JSON object stored alongside the weights (NULL = none). */
COVIEW_API coview_status coview_model_save(coview_model* model, const char* path,
                                           const char* meta);
COVIEW_API coview_status coview_model_config(const coview_model* model, char** out);
/* Checksums over the segmentation parameters and over all parameters. */
COVIEW_API coview_status coview_model_checksum(coview_model* model, uint64_t* fcn,
                                               uint64_t* all);
COVIEW_API void coview_model_free(coview_model* model);

/* Metadata JSON of a checkpoint file, including its model configuration. */
COVIEW_API coview_status coview_checkpoint_meta(const char* checkpoint, char** out);

/* ---- training ---- */

/* Called after every epoch with the epoch record as JSON. A nonzero return
 * stops training with COVIEW_E_ABORTED. */
typedef int (*coview_epoch_fn)(const char* record, coview_model* model, void* user);

/* Runs the stage named in config ("stage": "fcn" | "joint"). The joint stage
 * needs a model with a matching branch for config's problem and samples its
 * training pairs from the train split. history receives
 * {"epochs": [...], "fcn_checksum_start": n}. */
COVIEW_API coview_status coview_train(coview_model* model, const coview_dataset* data,
                                      const char* config, coview_epoch_fn on_epoch, void* user,
                                      char** history);

/* ---- evaluation ---- */

/* model may be NULL for the copy-first method. When predictions_dir is
 * non-NULL, propagated masks are written there. */
COVIEW_API coview_status coview_evaluate(const coview_dataset* data, const coview_model* model,
                                         const char* config, const char* predictions_dir,
                                         char** report);

/* IoU-vs-length and PR figures (SVG + CSV) for one or more report files. With
 * dataset_dir and predictions_dir (report 0 only), per-frame overlays are
 * written under out_dir/overlays. */
COVIEW_API coview_status coview_plot(const char* const* reports, size_t num_reports,
                                     const char* out_dir, const char* dataset_dir,
                                     const char* predictions_dir, int* overlays_written);

#ifdef __cplusplus
}
#endif

#endif
