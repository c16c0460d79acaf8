/* avfuse C API: experiment configuration, the experiment commands and
 * checkpoint inference behind opaque handles. Every call returns an
 * avf_status; on failure avf_last_error() describes the problem on the
 * calling thread. Strings returned through char** are owned by the caller and
 * released with avf_string_free. */
#ifndef AVFUSE_AVFUSE_H
#define AVFUSE_AVFUSE_H

#include <stddef.h>
#include <stdint.h>

#if defined(AVFUSE_BUILDING_LIBRARY)
#define AVF_API __attribute__((visibility("default")))
#else
#define AVF_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum avf_status {
  AVF_OK = 0,
  AVF_ERR_INVALID_ARGUMENT = 1,
  AVF_ERR_CONFIG = 2,
  AVF_ERR_DIMENSION = 3,
  AVF_ERR_NUMERIC = 4,
  AVF_ERR_INDEX = 5,
  AVF_ERR_CONTRACT = 6,
  AVF_ERR_VALIDATION = 7,
  AVF_ERR_PARSE = 8,
  AVF_ERR_IO = 9,
  AVF_ERR_CHECK_FAILED = 10, /* a run completed but a declared check did not hold */
  AVF_ERR_INTERNAL = 11
} avf_status;

typedef struct avf_experiment avf_experiment;
typedef struct avf_model avf_model;

/* Receives progress lines from long-running commands. */
typedef void (*avf_progress_fn)(const char* message, void* user);

AVF_API const char* avf_version(void);
AVF_API const char* avf_status_name(avf_status status);
AVF_API const char* avf_last_error(void);
AVF_API void avf_string_free(char* s);

/* ---- configuration ---------------------------------------------------------------- */

/* Default configuration. */
AVF_API avf_status avf_experiment_create(avf_experiment** out);
/* Configuration file in [section] key = value form. */
AVF_API avf_status avf_experiment_load(const char* path, avf_experiment** out);
/* "section.key=value"; applied on top of the current values. */
AVF_API avf_status avf_experiment_override(avf_experiment* exp, const char* assignment);
AVF_API avf_status avf_experiment_echo(const avf_experiment* exp, char** out_text);
AVF_API avf_status avf_experiment_set_progress(avf_experiment* exp, avf_progress_fn fn, void* user);
AVF_API void avf_experiment_free(avf_experiment* exp);

/* ---- commands --------------------------------------------------------------------- */
/* data_dir may be NULL or empty: the corpus is then generated from the
 * configuration. Tables are returned as aligned text. */

AVF_API avf_status avf_gen_data(const avf_experiment* exp, const char* out_dir);
AVF_API avf_status avf_train(const avf_experiment* exp, const char* data_dir, const char* out_dir,
                             double* out_rate);
AVF_API avf_status avf_eval(const avf_experiment* exp, const char* checkpoint, const char* data_dir,
                            const char* out_dir, double* out_rate);
AVF_API avf_status avf_distill(const avf_experiment* exp, const char* out_dir, char** out_table);
AVF_API avf_status avf_compare_fusion(const avf_experiment* exp, const char* data_dir,
                                      const char* out_dir, char** out_table);
AVF_API avf_status avf_sweep_window(const avf_experiment* exp, const char* data_dir,
                                    const char* out_dir, char** out_table);
/* AVF_ERR_CHECK_FAILED when any entry exceeds its tolerance. out_dir may be NULL. */
AVF_API avf_status avf_gradcheck(uint64_t seed, const char* out_dir, char** out_report);

/* ---- checkpoints -------------------------------------------------------------------- */

AVF_API avf_status avf_model_load(const char* path, avf_model** out);
/* JSON object with the model configuration and parameter count. */
AVF_API avf_status avf_model_info(const avf_model* model, char** out_json);
/* Greedy decode of one sample. audio is row-major [frames x audio_width];
 * visual may be NULL for audio-only models. Writes up to capacity ids and
 * stores the full decode length in out_count. */
AVF_API avf_status avf_model_decode(const avf_model* model, const double* audio, size_t frames,
                                    size_t audio_width, const double* visual, size_t visual_rows,
                                    size_t visual_width, size_t max_len, int32_t* out_tokens,
                                    size_t capacity, size_t* out_count);
AVF_API void avf_model_free(avf_model* model);

#ifdef __cplusplus
}
#endif

#endif
