/* SPDX-License-Identifier: Apache-2.0 */
#ifndef NETMAMBA_NETMAMBA_H
#define NETMAMBA_NETMAMBA_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define NM_API __declspec(dllexport)
#else
#define NM_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum nm_status {
  NM_OK = 0,
  NM_ERR_ARGUMENT = 1,   /* null handle or bad argument */
  NM_ERR_CONFIG = 2,     /* unknown key, bad value, inconsistent layout */
  NM_ERR_DATA = 3,       /* missing/unreadable input, bad labels, empty split */
  NM_ERR_FORMAT = 4,     /* malformed or unsupported file */
  NM_ERR_CHECKPOINT = 5, /* checkpoint does not match the model */
  NM_ERR_NUMERIC = 6,    /* non-finite loss, gradient or activation */
  NM_ERR_INTERNAL = 7
} nm_status;

typedef struct nm_config nm_config;
typedef struct nm_model nm_model;

NM_API const char* nm_version(void);

/* Message for the last failed call on this thread ("" if none). */
NM_API const char* nm_last_error(void);
/* Tensor named by the last NM_ERR_CHECKPOINT on this thread ("" if none). */
NM_API const char* nm_last_error_tensor(void);

/* Strings returned through char** out-parameters are owned by the caller. */
NM_API void nm_string_free(char* s);

/* Caps the BLAS worker count; n <= 0 leaves it unchanged. */
NM_API void nm_set_num_threads(int n);

/* Run configuration: built-in defaults, overridden by nm_config_load_file
   and nm_config_set in call order. */
NM_API nm_config* nm_config_new(void);
NM_API void nm_config_free(nm_config* cfg);
NM_API nm_status nm_config_load_file(nm_config* cfg, const char* path);
NM_API nm_status nm_config_set(nm_config* cfg, const char* key, const char* value);
NM_API nm_status nm_config_get(const nm_config* cfg, const char* key, char** out_value);
/* All keys as `key = value` lines. */
NM_API nm_status nm_config_dump(const nm_config* cfg, char** out_text);

NM_API nm_status nm_count_parameters(const nm_config* cfg, size_t num_classes, uint64_t* out_pretrain,
                                     uint64_t* out_finetune);

/* input_dir/<class>/NAME.pcap -> train/val/test.nmstride, manifest.json and
   summary.json in output_dir. out_summary (nullable) receives the summary. */
NM_API nm_status nm_extract(const nm_config* cfg, const char* input_dir, const char* output_dir, char** out_summary);

/* Writes a seeded synthetic labeled set split into train/val/test.nmstride
   using the configured layout, ratios and seed. */
NM_API nm_status nm_synthesize(const nm_config* cfg, size_t num_classes, size_t per_class, const char* output_dir);

/* Masked-reconstruction training on data_file. resume_checkpoint (nullable)
   continues a previous run. Writes checkpoints and loss_log.csv to out_dir. */
NM_API nm_status nm_pretrain(const nm_config* cfg, const char* data_file, const char* out_dir,
                             const char* resume_checkpoint, char** out_report);

/* Classification training on data_dir/{train,val,test}.nmstride.
   init_checkpoint NULL trains from random initialization. */
NM_API nm_status nm_finetune(const nm_config* cfg, const char* data_dir, const char* out_dir,
                             const char* init_checkpoint, char** out_report);

NM_API nm_status nm_model_load(const char* checkpoint, nm_model** out_model);
NM_API void nm_model_free(nm_model* model);
NM_API nm_status nm_model_save(const nm_model* model, const char* checkpoint);
/* Model configuration as JSON. */
NM_API nm_status nm_model_config(const nm_model* model, char** out_json);
NM_API nm_status nm_evaluate(const nm_model* model, const char* data_file, size_t batch, char** out_report);

/* Encoder throughput per (batch, length). model NULL uses a randomly
   initialized encoder from cfg. out_csv gets
   batch,seq_len,samples_per_sec,peak_bytes; out_fit (nullable) gets the
   length-scaling exponent per batch size as JSON. */
NM_API nm_status nm_bench(const nm_config* cfg, const nm_model* model, char** out_csv, char** out_fit);

#ifdef __cplusplus
}
#endif

#endif /* NETMAMBA_NETMAMBA_H */
