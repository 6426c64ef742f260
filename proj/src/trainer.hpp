#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "losses.hpp"
#include "model.hpp"
#include "optimizer.hpp"

namespace mdkt {

enum class TrainStage { kTeacher, kDistill };

struct TrainConfig {
  TrainStage stage = TrainStage::kTeacher;
  std::uint32_t epochs = 60;
  std::uint32_t steps_per_epoch = 40;
  BatchSpec batch_spec;
  AdamConfig adam;
  std::uint64_t seed = 1;
  LossConfig loss;
  bool freeze_teacher = false;
  std::uint32_t checkpoint_every = 10;  // epochs

  void validate(std::uint32_t frames_per_clip) const;
};

struct StepRecord {
  std::uint64_t step = 0;
  double total = 0.0;
  double tr = 0.0;
  double mkd = 0.0;
  double pd = 0.0;
  double mtcl = 0.0;
  double ce = 0.0;
  double teacher_grad_norm = 0.0;
  double student_grad_norm = 0.0;
  double wall_ms = 0.0;
};

struct TrainResult {
  EmbeddingNet teacher;
  std::optional<EmbeddingNet> student;
  std::vector<StepRecord> log;
  std::string final_checkpoint;          // student for distill, teacher otherwise
  std::string final_teacher_checkpoint;  // distill only
};

// Stage 1: CE + batch-hard triplet on full clips. Emits checkpoints and a
// line-delimited JSON step log under output_dir (pass empty to skip files).
TrainResult train_teacher(const Dataset& dataset, const TrainConfig& cfg,
                          const ModelConfig& model_cfg, const std::string& output_dir);

// Stage 2: joint teacher/student updates under the combined objective with
// asymmetric views: teacher N frames per clip, student an M-subset of them.
// The student starts as a copy of the teacher checkpoint.
TrainResult distill(const EmbeddingNet& teacher_start, const Dataset& dataset,
                    const TrainConfig& cfg, const std::string& output_dir);

// label ids remapped to [0, n_train_ids) class indices
std::vector<std::uint32_t> class_indices(const Dataset& dataset,
                                         const std::vector<ClipSample>& clips);

double grad_norm(EmbeddingNet& net);

}  // namespace mdkt
