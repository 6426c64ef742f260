#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "run_config.hpp"

namespace mdkt {

// Evaluation reports for both networks and both protocols after a full
// teacher -> distill run.
struct PipelineResult {
  EvalReport student_i2v;
  EvalReport student_v2v;
  EvalReport teacher_i2v;
  EvalReport teacher_v2v;
  std::string student_checkpoint;
  std::string teacher_checkpoint;
  double final_total_loss = 0.0;
};

nlohmann::json report_to_json(const EvalReport& report, std::uint64_t seed,
                              const std::string& config_digest);

// Trains the teacher (reusing cached_teacher_ckpt when given), distills, and
// evaluates. run_seed perturbs model init and batch sampling; the dataset
// stays fixed by its own seed.
PipelineResult run_pipeline(const RunConfig& cfg, const Dataset& dataset, std::uint64_t run_seed,
                            const std::string& work_dir,
                            const std::string& cached_teacher_ckpt = "");

// Trains only the teacher for run_seed and returns the checkpoint path.
std::string train_cached_teacher(const RunConfig& cfg, const Dataset& dataset,
                                 std::uint64_t run_seed, const std::string& work_dir);

struct AblationRowSpec {
  std::string label;
  LossConfig loss;
  bool freeze_teacher = false;
};

// Row definitions per suite: "loss_terms" (8 toggle rows), "mutual"
// (freeze teacher / without mutual / with mutual), "ce" (with / without).
std::vector<AblationRowSpec> ablation_rows(const std::string& suite, const LossConfig& base);

struct AblationTable {
  std::string suite;
  nlohmann::json table;  // full per-row, per-seed detail
  std::string csv;       // fixed 10-column summary (student network)
};

// Runs the suite over n_seeds seeds per row with up to `jobs` rows training
// concurrently. Completed rows found under <output>/<suite>/rows are reused.
AblationTable run_ablation(const RunConfig& base, const std::string& suite, std::uint32_t n_seeds,
                           std::uint32_t jobs);

// Finite-difference verification of the full loss zoo: 20 random PK batches
// per loss, step 1e-5, tolerance 1e-4. Returns per-loss max relative errors.
nlohmann::json grad_check_report();

}  // namespace mdkt
