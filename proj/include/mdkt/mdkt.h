/*
 * mdkt - mutual-distillation metric-learning engine
 *
 * C interface to the training, evaluation, and experiment machinery. All
 * functions return mdkt_status; on failure mdkt_last_error() describes the
 * problem for the calling thread. Strings returned through `char**` out
 * parameters are owned by the caller and released with mdkt_string_free().
 *
 * Configuration documents are JSON; see the project README for the schema.
 */
#ifndef MDKT_H
#define MDKT_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes double as process exit codes for the bundled CLI:
 * 0 success, 2 config/user error, 3 numeric divergence, 4 I/O error. */
typedef enum mdkt_status {
  MDKT_OK = 0,
  MDKT_ERR_INTERNAL = 1,
  MDKT_ERR_CONFIG = 2,
  MDKT_ERR_NUMERIC = 3,
  MDKT_ERR_IO = 4
} mdkt_status;

typedef struct mdkt_dataset mdkt_dataset;
typedef struct mdkt_model mdkt_model;

const char* mdkt_version(void);

/* Message for the most recent failure on this thread; empty string if the
 * last call succeeded. The pointer stays valid until the next call. */
const char* mdkt_last_error(void);

void mdkt_string_free(char* s);

/* ---- datasets --------------------------------------------------------- */

/* config_json: a full run configuration or just its "dataset" section. */
mdkt_status mdkt_dataset_generate(const char* config_json, mdkt_dataset** out);
mdkt_status mdkt_dataset_load(const char* path, mdkt_dataset** out);
mdkt_status mdkt_dataset_save(const mdkt_dataset* dataset, const char* path);
mdkt_status mdkt_dataset_summary(const mdkt_dataset* dataset, char** json_out);
void mdkt_dataset_free(mdkt_dataset* dataset);

/* ---- models ----------------------------------------------------------- */

mdkt_status mdkt_model_load(const char* path, mdkt_model** out);
mdkt_status mdkt_model_save(const mdkt_model* model, const char* path);
void mdkt_model_free(mdkt_model* model);

/* ---- training / evaluation -------------------------------------------- */

/* Trains the stage-1 teacher; artifacts land under
 * <output_dir>/<run_name>. report_json summarizes checkpoints and losses. */
mdkt_status mdkt_train_teacher(const char* run_config_json, char** report_json);

/* Runs stage-2 mutual distillation. The teacher checkpoint comes from the
 * config's "teacher_checkpoint" field, defaulting to the stage-1 output
 * location under the run directory. */
mdkt_status mdkt_distill(const char* run_config_json, char** report_json);

/* Evaluates a checkpoint on the config's dataset under both I2V and V2V
 * protocols. network is "teacher" or "student" (a report label). */
mdkt_status mdkt_evaluate(const char* run_config_json, const char* checkpoint_path,
                          const char* network, char** report_json);

/* suite: "loss_terms", "mutual", or "ce". Emits <suite>.json and <suite>.csv
 * under <run_dir>/ablate-<suite>/ and returns the JSON table. */
mdkt_status mdkt_ablate(const char* run_config_json, const char* suite, unsigned n_seeds,
                        unsigned jobs, char** table_json);

/* Finite-difference verification of every loss; report lists the max
 * relative error per loss. Fails with MDKT_ERR_NUMERIC if any check fails
 * (the report is still returned). */
mdkt_status mdkt_grad_check(char** report_json);

#ifdef __cplusplus
}
#endif

#endif /* MDKT_H */
