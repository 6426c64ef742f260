#include "trainer.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "json.hpp"

namespace mdkt {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

enum TrainStream : std::uint64_t {
  kBatchStream = 101,
  kViewStream = 102,
};

json record_to_json(const StepRecord& r) {
  return json{{"step", r.step},
              {"total", r.total},
              {"tr", r.tr},
              {"mkd", r.mkd},
              {"pd", r.pd},
              {"mtcl", r.mtcl},
              {"ce", r.ce},
              {"teacher_grad_norm", r.teacher_grad_norm},
              {"student_grad_norm", r.student_grad_norm},
              {"wall_ms", r.wall_ms}};
}

class StepLogger {
 public:
  StepLogger(const std::string& output_dir, const std::string& stage) {
    if (output_dir.empty()) return;
    fs::create_directories(output_dir);
    path_ = output_dir + "/" + stage + "-log.jsonl";
    out_.open(path_, std::ios::app);
    if (!out_) throw IoError("cannot open training log: " + path_);
  }

  void append(const StepRecord& r) {
    if (!out_.is_open()) return;
    out_ << record_to_json(r).dump() << '\n';
  }

 private:
  std::string path_;
  std::ofstream out_;
};

double wall_ms_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

[[noreturn]] void divergence(std::uint64_t step, const char* stage, const NumericError& e) {
  throw NumericError(std::string("training diverged at ") + stage + " step " +
                     std::to_string(step) + ": " + e.what());
}

}  // namespace

void TrainConfig::validate(std::uint32_t frames_per_clip) const {
  if (epochs < 1 || steps_per_epoch < 1) throw ConfigError("train: epochs and steps must be >= 1");
  if (checkpoint_every < 1) throw ConfigError("train: checkpoint_every must be >= 1");
  batch_spec.validate(frames_per_clip);
  adam.validate();
  loss.validate();
}

std::vector<std::uint32_t> class_indices(const Dataset& dataset,
                                         const std::vector<ClipSample>& clips) {
  const auto ids = dataset.train_identities();
  std::map<std::uint32_t, std::uint32_t> index;
  for (std::size_t i = 0; i < ids.size(); ++i) index[ids[i]] = static_cast<std::uint32_t>(i);
  std::vector<std::uint32_t> out;
  out.reserve(clips.size());
  for (const ClipSample& clip : clips) {
    auto it = index.find(clip.identity);
    if (it == index.end()) throw UsageError("class_indices: identity not in the training split");
    out.push_back(it->second);
  }
  return out;
}

double grad_norm(EmbeddingNet& net) {
  double acc = 0.0;
  for (const Tensor& p : net.parameters()) {
    for (double g : p.grad()) acc += g * g;
  }
  return std::sqrt(acc);
}

TrainResult train_teacher(const Dataset& dataset, const TrainConfig& cfg,
                          const ModelConfig& model_cfg, const std::string& output_dir) {
  if (cfg.stage != TrainStage::kTeacher) throw ConfigError("train_teacher: stage must be teacher");
  cfg.validate(dataset.config.frames_per_clip);
  model_cfg.validate();

  TrainResult result;
  result.teacher = EmbeddingNet::init(model_cfg);
  Adam opt(result.teacher.parameters(), cfg.adam);
  StepLogger logger(output_dir, "teacher");

  std::uint64_t step = 0;
  for (std::uint32_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::uint32_t s = 0; s < cfg.steps_per_epoch; ++s) {
      ++step;
      const auto t0 = std::chrono::steady_clock::now();
      Rng batch_rng(derive_seed(cfg.seed, kBatchStream, step));
      const auto batch = sample_pk_batch(dataset, cfg.batch_spec, batch_rng);
      const auto labels = class_indices(dataset, batch);

      StepRecord record;
      record.step = step;
      try {
        Tape tape;
        Tensor reps = result.teacher.clip_representations(&tape, batch);
        Tensor logits = result.teacher.logits(&tape, reps);
        Tensor dist = pairwise_sq_euclidean(&tape, reps);
        Tensor tr = triplet_loss(&tape, dist, batch_hard_triplets(dist, labels), cfg.loss.margin);
        Tensor ce = ce_loss(&tape, logits, labels);
        Tensor total = add(&tape, ce, tr);

        opt.zero_grad();
        tape.backward(total);
        record.tr = tr.value();
        record.ce = ce.value();
        record.total = total.value();
        record.teacher_grad_norm = grad_norm(result.teacher);
        opt.step();
      } catch (const NumericError& e) {
        divergence(step, "teacher", e);
      }
      record.wall_ms = wall_ms_since(t0);
      logger.append(record);
      result.log.push_back(record);
    }
    if (!output_dir.empty() && epoch % cfg.checkpoint_every == 0) {
      save_checkpoint(result.teacher,
                      output_dir + "/teacher-epoch" + std::to_string(epoch) + ".ckpt");
    }
  }
  if (!output_dir.empty()) {
    result.final_checkpoint = output_dir + "/teacher-final.ckpt";
    save_checkpoint(result.teacher, result.final_checkpoint);
  }
  return result;
}

TrainResult distill(const EmbeddingNet& teacher_start, const Dataset& dataset,
                    const TrainConfig& cfg, const std::string& output_dir) {
  if (cfg.stage != TrainStage::kDistill) throw ConfigError("distill: stage must be distill");
  cfg.validate(dataset.config.frames_per_clip);

  TrainResult result;
  result.teacher = teacher_start.clone();
  result.student = teacher_start.clone();  // student starts from the teacher weights
  EmbeddingNet& teacher = result.teacher;
  EmbeddingNet& student = *result.student;

  Adam teacher_opt(teacher.parameters(), cfg.adam);
  Adam student_opt(student.parameters(), cfg.adam);
  StepLogger logger(output_dir, "distill");

  const std::uint32_t n_views = cfg.batch_spec.teacher_views;
  const std::uint32_t m_views = cfg.batch_spec.student_views;

  std::uint64_t step = 0;
  for (std::uint32_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::uint32_t s = 0; s < cfg.steps_per_epoch; ++s) {
      ++step;
      const auto t0 = std::chrono::steady_clock::now();
      Rng batch_rng(derive_seed(cfg.seed, kBatchStream, step));
      const auto batch = sample_pk_batch(dataset, cfg.batch_spec, batch_rng);
      const auto labels = class_indices(dataset, batch);

      // view subsets are re-sampled every step; the student reads a subset
      // of exactly the frames the teacher sees
      Rng view_rng(derive_seed(cfg.seed, kViewStream, step));
      std::vector<ClipSample> teacher_clips, student_clips;
      teacher_clips.reserve(batch.size());
      student_clips.reserve(batch.size());
      for (const ClipSample& clip : batch) {
        teacher_clips.push_back(subset_views(clip, n_views, view_rng));
        student_clips.push_back(subset_views(teacher_clips.back(), m_views, view_rng));
      }

      StepRecord record;
      record.step = step;
      try {
        Tape tape;
        NetworkOutput t_out, s_out;
        t_out.embeddings = teacher.clip_representations(&tape, teacher_clips);
        t_out.logits = teacher.logits(&tape, t_out.embeddings);
        s_out.embeddings = student.clip_representations(&tape, student_clips);
        s_out.logits = student.logits(&tape, s_out.embeddings);

        const ObjectiveResult obj = total_objective(&tape, t_out, s_out, labels, cfg.loss);

        teacher_opt.zero_grad();
        student_opt.zero_grad();
        tape.backward(obj.total);

        record.total = obj.weighted_total;
        record.tr = obj.tr;
        record.mkd = obj.mkd;
        record.pd = obj.pd;
        record.mtcl = obj.mtcl;
        record.ce = obj.ce;
        record.teacher_grad_norm = grad_norm(teacher);
        record.student_grad_norm = grad_norm(student);

        student_opt.step();
        if (cfg.freeze_teacher) {
          teacher_opt.zero_grad();  // gradients discarded, parameters untouched
        } else {
          teacher_opt.step();
        }
      } catch (const NumericError& e) {
        divergence(step, "distill", e);
      }
      record.wall_ms = wall_ms_since(t0);
      logger.append(record);
      result.log.push_back(record);
    }
    if (!output_dir.empty() && epoch % cfg.checkpoint_every == 0) {
      const std::string tag = std::to_string(epoch);
      save_checkpoint(student, output_dir + "/distill-epoch" + tag + ".ckpt");
      save_checkpoint(teacher, output_dir + "/distill-epoch" + tag + "-teacher.ckpt");
    }
  }
  if (!output_dir.empty()) {
    result.final_checkpoint = output_dir + "/distill-final.ckpt";
    result.final_teacher_checkpoint = output_dir + "/distill-final-teacher.ckpt";
    save_checkpoint(student, result.final_checkpoint);
    save_checkpoint(teacher, result.final_teacher_checkpoint);
  }
  return result;
}

}  // namespace mdkt
