#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "json.hpp"
#include "trainer.hpp"

using namespace mdkt;

namespace {

namespace fs = std::filesystem;

DatasetConfig tiny_dataset_config() {
  DatasetConfig c;
  c.n_train_ids = 6;
  c.n_test_ids = 3;
  c.n_cameras = 2;
  c.frames_per_clip = 4;
  c.clips_per_id_per_camera = 2;
  c.latent_dim = 4;
  c.frame_dim = 8;
  c.seed = 5;
  return c;
}

ModelConfig tiny_model_config() {
  ModelConfig c;
  c.layer_dims = {8, 8, 4};
  c.n_classes = 6;
  c.init_seed = 9;
  return c;
}

TrainConfig tiny_train_config(TrainStage stage) {
  TrainConfig c;
  c.stage = stage;
  c.epochs = 2;
  c.steps_per_epoch = 3;
  c.batch_spec.identities_per_batch = 3;
  c.batch_spec.clips_per_identity = 2;
  c.batch_spec.teacher_views = 4;
  c.batch_spec.student_views = 2;
  c.seed = 77;
  c.checkpoint_every = 1;
  return c;
}

bool same_parameters(EmbeddingNet& a, EmbeddingNet& b) {
  auto pa = a.parameters();
  auto pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (!std::equal(pa[i].data().begin(), pa[i].data().end(), pb[i].data().begin())) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("adam: zero gradient leaves parameters unchanged, step count advances") {
  Tensor p = Tensor::from_data({3}, {1.0, -2.0, 0.5}, true);
  Adam opt({p}, AdamConfig{});
  const std::vector<double> before(p.data().begin(), p.data().end());
  opt.step();
  opt.step();
  CHECK(opt.step_count() == 2);
  for (std::size_t i = 0; i < 3; ++i) CHECK(p.data()[i] == before[i]);
}

TEST_CASE("adam: first bias-corrected step moves by about -lr") {
  Tensor p = Tensor::scalar(0.0, true);
  AdamConfig cfg;
  cfg.learning_rate = 0.1;
  Adam opt({p}, cfg);
  Tape tape;
  tape.backward(sum(&tape, p));  // unit gradient
  CHECK(p.grad()[0] == 1.0);
  opt.step();
  // m_hat = 1, v_hat = 1 after correction: step = -lr / (1 + eps)
  CHECK(p.data()[0] == doctest::Approx(-0.1).epsilon(1e-6));
}

TEST_CASE("adam: identical inputs give identical trajectories") {
  auto run = [] {
    Tensor p = Tensor::from_data({2}, {0.3, -0.7}, true);
    Adam opt({p}, AdamConfig{});
    for (int i = 0; i < 5; ++i) {
      p.zero_grad();
      Tape tape;
      Tensor loss = sum(&tape, mul(&tape, p, p));
      tape.backward(loss);
      opt.step();
    }
    return std::vector<double>(p.data().begin(), p.data().end());
  };
  CHECK(run() == run());
}

TEST_CASE("train_teacher drives triplet loss to zero on the degenerate generator") {
  DatasetConfig dc = tiny_dataset_config();
  dc.noise_scale = 0.0;
  dc.camera_scale = 0.0;  // every clip of an identity is the same point
  Dataset ds = generate(dc);

  TrainConfig tc = tiny_train_config(TrainStage::kTeacher);
  tc.epochs = 50;
  tc.steps_per_epoch = 4;
  TrainResult result = train_teacher(ds, tc, tiny_model_config(), "");
  double final_tr = result.log.back().tr;
  CHECK(final_tr == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("train_teacher is deterministic in the seed") {
  Dataset ds = generate(tiny_dataset_config());
  TrainConfig tc = tiny_train_config(TrainStage::kTeacher);
  TrainResult a = train_teacher(ds, tc, tiny_model_config(), "");
  TrainResult b = train_teacher(ds, tc, tiny_model_config(), "");
  CHECK(same_parameters(a.teacher, b.teacher));
  CHECK(a.log.back().total == b.log.back().total);
}

TEST_CASE("zero learning rate leaves the teacher at initialization") {
  Dataset ds = generate(tiny_dataset_config());
  TrainConfig tc = tiny_train_config(TrainStage::kTeacher);
  tc.adam.learning_rate = 0.0;
  TrainResult result = train_teacher(ds, tc, tiny_model_config(), "");
  EmbeddingNet fresh = EmbeddingNet::init(tiny_model_config());
  CHECK(same_parameters(result.teacher, fresh));
}

TEST_CASE("distill freeze contract and toggle composition") {
  Dataset ds = generate(tiny_dataset_config());
  EmbeddingNet teacher = EmbeddingNet::init(tiny_model_config());

  TrainConfig dc = tiny_train_config(TrainStage::kDistill);
  dc.freeze_teacher = true;
  TrainResult frozen = distill(teacher, ds, dc, "");
  EmbeddingNet original = teacher.clone();
  CHECK(same_parameters(frozen.teacher, original));        // teacher untouched
  CHECK(!same_parameters(*frozen.student, original));      // student trained

  dc.freeze_teacher = false;
  dc.loss.use_mkd = dc.loss.use_pd = dc.loss.use_mtcl = false;  // TR only
  TrainResult tr_only = distill(teacher, ds, dc, "");
  CHECK(tr_only.log.back().mkd == 0.0);
  CHECK(tr_only.log.back().pd == 0.0);
  CHECK(tr_only.log.back().mtcl == 0.0);
}

TEST_CASE("detached targets leave the teacher untouched under MKD-only distillation") {
  Dataset ds = generate(tiny_dataset_config());
  EmbeddingNet teacher = EmbeddingNet::init(tiny_model_config());

  TrainConfig dc = tiny_train_config(TrainStage::kDistill);
  dc.loss.use_tr = dc.loss.use_pd = dc.loss.use_mtcl = false;
  dc.loss.use_mkd = true;
  dc.loss.mutual = false;  // teacher appears only as a detached target
  TrainResult result = distill(teacher, ds, dc, "");
  EmbeddingNet original = teacher.clone();
  CHECK(same_parameters(result.teacher, original));
  CHECK(!same_parameters(*result.student, original));
}

TEST_CASE("distill is deterministic and writes checkpoints plus a step log") {
  Dataset ds = generate(tiny_dataset_config());
  EmbeddingNet teacher = EmbeddingNet::init(tiny_model_config());
  TrainConfig dc = tiny_train_config(TrainStage::kDistill);

  const std::string dir = (fs::temp_directory_path() / "mdkt_distill_run").string();
  fs::remove_all(dir);
  TrainResult a = distill(teacher, ds, dc, dir);
  TrainResult b = distill(teacher, ds, dc, "");
  CHECK(same_parameters(*a.student, *b.student));
  CHECK(same_parameters(a.teacher, b.teacher));

  CHECK(fs::exists(a.final_checkpoint));
  CHECK(fs::exists(a.final_teacher_checkpoint));
  CHECK(fs::exists(dir + "/distill-epoch1.ckpt"));

  // line-delge log: one JSON object per step with finite loss values
  std::ifstream log(dir + "/distill-log.jsonl");
  REQUIRE(log.good());
  std::string line;
  std::size_t lines = 0;
  while (std::getline(log, line)) {
    if (line.empty()) continue;
    const auto rec = nlohmann::json::parse(line);
    CHECK(std::isfinite(rec.at("total").get<double>()));
    CHECK(rec.contains("wall_ms"));
    CHECK(rec.contains("teacher_grad_norm"));
    ++lines;
  }
  CHECK(lines == dc.epochs * dc.steps_per_epoch);
  fs::remove_all(dir);
}

TEST_CASE("non-finite forward aborts with the offending step recorded") {
  Dataset ds = generate(tiny_dataset_config());
  EmbeddingNet teacher = EmbeddingNet::init(tiny_model_config());
  for (Tensor& p : teacher.parameters()) {
    for (double& v : p.mutable_data()) v = 1e200;  // guaranteed overflow in layer 2
  }
  TrainConfig dc = tiny_train_config(TrainStage::kDistill);
  CHECK_THROWS_WITH_AS(distill(teacher, ds, dc, ""), doctest::Contains("step 1"), NumericError);
}

TEST_CASE("training loss descends between early epochs on the default-style task") {
  DatasetConfig dcfg = tiny_dataset_config();
  Dataset ds = generate(dcfg);
  TrainConfig tc = tiny_train_config(TrainStage::kTeacher);
  tc.epochs = 5;
  tc.steps_per_epoch = 8;
  TrainResult result = train_teacher(ds, tc, tiny_model_config(), "");
  auto epoch_mean = [&](std::uint32_t epoch) {
    double acc = 0.0;
    for (std::uint32_t s = 0; s < tc.steps_per_epoch; ++s) {
      acc += result.log[(epoch - 1) * tc.steps_per_epoch + s].total;
    }
    return acc / tc.steps_per_epoch;
  };
  CHECK(epoch_mean(5) < epoch_mean(1));
}
