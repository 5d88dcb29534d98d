/* C API for the preview toolkit: multi-view depth dataset generation,
 * cross-view representation pre-training, linear probing, pose metrics and
 * latent-space analysis.
 *
 * All entry points return a pv_status; on failure pv_last_error() holds a
 * human-readable message for the calling thread. Handles are opaque and must
 * be released with their matching *_close function.
 */
#ifndef PREVIEW_PREVIEW_H
#define PREVIEW_PREVIEW_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined _WIN32
#define PV_API __declspec(dllexport)
#else
#define PV_API __attribute__((visibility("default")))
#endif

typedef enum pv_status {
    PV_OK = 0,
    PV_ERR_CONFIG = 2,  /* bad configuration, arguments or shapes */
    PV_ERR_IO = 3,      /* filesystem or parse failure */
    PV_ERR_NUMERIC = 4  /* non-finite values in a numeric pipeline */
} pv_status;

PV_API const char* pv_version(void);

/* Message for the most recent failure on this thread. */
PV_API const char* pv_last_error(void);

/* ------------------------------------------------------------------------
 * Subcommand drivers. Each takes a resolved run-configuration JSON document
 * (see the README for keys and defaults; unknown keys are rejected) and
 * writes its outputs under the configured out_dir.
 */
PV_API pv_status pv_run_synth_gen(const char* config_json);
PV_API pv_status pv_run_train(const char* config_json);
PV_API pv_status pv_run_probe(const char* config_json);
PV_API pv_status pv_run_eval(const char* config_json);
PV_API pv_status pv_run_analyze(const char* config_json);

/* ------------------------------------------------------------------------
 * Dataset handles.
 */
typedef struct pv_dataset pv_dataset;

PV_API pv_status pv_dataset_open(const char* manifest_path, pv_dataset** out);
PV_API void pv_dataset_close(pv_dataset* ds);
PV_API pv_status pv_dataset_num_samples(const pv_dataset* ds, int64_t* out);
PV_API pv_status pv_dataset_num_labeled(const pv_dataset* ds, int64_t* out);
/* Copies the id of sample `index` into buf (NUL-terminated, truncated to
 * buf_len). */
PV_API pv_status pv_dataset_sample_id(const pv_dataset* ds, int64_t index, char* buf,
                                      size_t buf_len);
/* Resolution of the raw depth images. */
PV_API pv_status pv_dataset_resolution(const pv_dataset* ds, int32_t* height, int32_t* width);

/* ------------------------------------------------------------------------
 * Checkpoint handles and frozen-encoder inference.
 */
typedef struct pv_checkpoint pv_checkpoint;

PV_API pv_status pv_checkpoint_open(const char* path, pv_checkpoint** out);
PV_API void pv_checkpoint_close(pv_checkpoint* ck);
PV_API pv_status pv_checkpoint_latent_dim(const pv_checkpoint* ck, int32_t* out);
PV_API pv_status pv_checkpoint_joint_count(const pv_checkpoint* ck, int32_t* out);

/* Encodes a normalized 64x64 crop (row-major, values in [-1, 1]) into a
 * latent code of pv_checkpoint_latent_dim floats. */
PV_API pv_status pv_encode(const pv_checkpoint* ck, const float* crop_4096, float* latent_out);

/* Latent code plus linear pose head: writes joint_count*3 normalized joint
 * coordinates. */
PV_API pv_status pv_predict_pose(const pv_checkpoint* ck, const float* crop_4096,
                                 float* joints_out);

/* ------------------------------------------------------------------------
 * Metrics on caller-provided arrays (frames x joints x 3, millimetres).
 */
PV_API pv_status pv_mean_joint_error(const double* preds, const double* gts, int64_t frames,
                                     int32_t joints, double* me_mm);
/* ME plus the area under the joint-/frame-based success-rate curves up to
 * 80 mm on a 1 mm grid. Any output pointer may be NULL. */
PV_API pv_status pv_eval_metrics(const double* preds, const double* gts, int64_t frames,
                                 int32_t joints, double* me_mm, double* js80, double* fs80);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* PREVIEW_PREVIEW_H */
