#include "experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "grad_check.hpp"

namespace mdkt {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

enum SeedTag : std::uint64_t {
  kInitTag = 7001,
  kTeacherTag = 7002,
  kDistillTag = 7003,
};

std::string sanitize(const std::string& label) {
  std::string out;
  for (char c : label) out.push_back(std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  fs::create_directories(fs::path(path).parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << text;
}

json eval_report_json(const EvalReport& r) {
  return json{{"mode", r.mode},       {"network", r.network},     {"cmc1", r.cmc1},
              {"cmc5", r.cmc5},       {"mAP", r.map},             {"n_queries", r.n_queries},
              {"n_skipped", r.n_skipped}};
}

double mean_of(const std::vector<double>& xs) {
  double acc = 0.0;
  for (double x : xs) acc += x;
  return acc / static_cast<double>(xs.size());
}

double std_of(const std::vector<double>& xs) {
  const double m = mean_of(xs);
  double acc = 0.0;
  for (double x : xs) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(xs.size()));
}

std::string num(double v) { return json(v).dump(); }

}  // namespace

json report_to_json(const EvalReport& report, std::uint64_t seed,
                    const std::string& config_digest) {
  json j = eval_report_json(report);
  j["seed"] = seed;
  j["config_digest"] = config_digest;
  return j;
}

std::string train_cached_teacher(const RunConfig& cfg, const Dataset& dataset,
                                 std::uint64_t run_seed, const std::string& work_dir) {
  const std::string ckpt = work_dir + "/teacher-final.ckpt";
  if (fs::exists(ckpt)) return ckpt;
  fs::create_directories(work_dir);
  ModelConfig model_cfg = cfg.model;
  model_cfg.init_seed = derive_seed(cfg.model.init_seed, kInitTag, run_seed);
  TrainConfig tcfg = cfg.teacher_train;
  tcfg.seed = derive_seed(cfg.teacher_train.seed, kTeacherTag, run_seed);
  train_teacher(dataset, tcfg, model_cfg, work_dir);
  return ckpt;
}

PipelineResult run_pipeline(const RunConfig& cfg, const Dataset& dataset, std::uint64_t run_seed,
                            const std::string& work_dir,
                            const std::string& cached_teacher_ckpt) {
  fs::create_directories(work_dir);

  EmbeddingNet teacher;
  if (!cached_teacher_ckpt.empty()) {
    teacher = load_checkpoint(cached_teacher_ckpt);
  } else {
    ModelConfig model_cfg = cfg.model;
    model_cfg.init_seed = derive_seed(cfg.model.init_seed, kInitTag, run_seed);
    TrainConfig tcfg = cfg.teacher_train;
    tcfg.seed = derive_seed(cfg.teacher_train.seed, kTeacherTag, run_seed);
    teacher = train_teacher(dataset, tcfg, model_cfg, work_dir + "/teacher").teacher;
  }

  TrainConfig dcfg = cfg.distill_train;
  dcfg.seed = derive_seed(cfg.distill_train.seed, kDistillTag, run_seed);
  TrainResult distilled = distill(teacher, dataset, dcfg, work_dir + "/distill");

  PipelineResult out;
  out.student_checkpoint = distilled.final_checkpoint;
  out.teacher_checkpoint = distilled.final_teacher_checkpoint;
  out.final_total_loss = distilled.log.empty() ? 0.0 : distilled.log.back().total;

  auto protocol = [&](EvalMode mode, EvalNetwork network) {
    EvalProtocol p;
    p.mode = mode;
    p.network = network;
    p.distance = cfg.eval.distance;
    p.exclude_same_camera = cfg.eval.exclude_same_camera;
    return p;
  };
  out.student_i2v = evaluate(*distilled.student, dataset,
                             protocol(EvalMode::kImageToVideo, EvalNetwork::kStudent));
  out.student_v2v = evaluate(*distilled.student, dataset,
                             protocol(EvalMode::kVideoToVideo, EvalNetwork::kStudent));
  out.teacher_i2v = evaluate(distilled.teacher, dataset,
                             protocol(EvalMode::kImageToVideo, EvalNetwork::kTeacher));
  out.teacher_v2v = evaluate(distilled.teacher, dataset,
                             protocol(EvalMode::kVideoToVideo, EvalNetwork::kTeacher));
  return out;
}

std::vector<AblationRowSpec> ablation_rows(const std::string& suite, const LossConfig& base) {
  std::vector<AblationRowSpec> rows;
  auto with_toggles = [&](const std::string& label, bool tr, bool mkd, bool pd, bool mtcl) {
    AblationRowSpec row;
    row.label = label;
    row.loss = base;
    row.loss.use_tr = tr;
    row.loss.use_mkd = mkd;
    row.loss.use_pd = pd;
    row.loss.use_mtcl = mtcl;
    row.loss.use_ce = false;
    return row;
  };

  if (suite == "loss_terms") {
    rows.push_back(with_toggles("TR", true, false, false, false));
    rows.push_back(with_toggles("TCL", false, false, false, true));
    rows.push_back(with_toggles("TR+TCL", true, false, false, true));
    rows.push_back(with_toggles("KD+PD+TCL", false, true, true, true));
    rows.push_back(with_toggles("TR+KD+PD", true, true, true, false));
    rows.push_back(with_toggles("TR+KD+TCL", true, true, false, true));
    rows.push_back(with_toggles("TR+PD+TCL", true, false, true, true));
    rows.push_back(with_toggles("ALL", true, true, true, true));
  } else if (suite == "mutual") {
    AblationRowSpec freeze = with_toggles("freeze teacher", true, true, true, true);
    freeze.freeze_teacher = true;
    rows.push_back(freeze);
    AblationRowSpec directed = with_toggles("without mutual", true, true, true, true);
    directed.loss.mutual = false;
    rows.push_back(directed);
    rows.push_back(with_toggles("with mutual", true, true, true, true));
  } else if (suite == "ce") {
    AblationRowSpec with_ce = with_toggles("with CE loss", true, true, true, true);
    with_ce.loss.use_ce = true;
    rows.push_back(with_ce);
    rows.push_back(with_toggles("without CE loss", true, true, true, true));
  } else {
    throw ConfigError("unknown ablation suite \"" + suite +
                      "\" (expected loss_terms, mutual, or ce)");
  }
  return rows;
}

namespace {

json row_toggles(const AblationRowSpec& row) {
  return json{{"use_tr", row.loss.use_tr},   {"use_mkd", row.loss.use_mkd},
              {"use_pd", row.loss.use_pd},   {"use_mtcl", row.loss.use_mtcl},
              {"use_ce", row.loss.use_ce},   {"mutual", row.loss.mutual},
              {"freeze_teacher", row.freeze_teacher}};
}

json run_ablation_row(const RunConfig& base, const Dataset& dataset, const AblationRowSpec& row,
                      std::uint32_t n_seeds, const std::string& root,
                      const std::vector<std::string>& teacher_ckpts,
                      const std::string& digest) {
  const std::string row_file = root + "/rows/" + sanitize(row.label) + ".json";
  if (fs::exists(row_file)) {
    std::ifstream in(row_file);
    json cached;
    try {
      in >> cached;
    } catch (...) {
      cached = json();
    }
    if (cached.is_object() && cached.value("config_digest", "") == digest &&
        cached.value("seed_count", 0u) == n_seeds) {
      return cached;  // row already completed with this exact configuration
    }
  }

  RunConfig cfg = base;
  cfg.distill_train.loss = row.loss;
  cfg.distill_train.freeze_teacher = row.freeze_teacher;

  std::vector<double> i2v_cmc1, i2v_map, v2v_cmc1, v2v_map;
  json per_seed = json::array();
  for (std::uint32_t seed = 0; seed < n_seeds; ++seed) {
    const std::string run_dir = root + "/rows/" + sanitize(row.label) + "/seed" +
                                std::to_string(seed);
    PipelineResult pipe = run_pipeline(cfg, dataset, seed, run_dir, teacher_ckpts[seed]);
    i2v_cmc1.push_back(pipe.student_i2v.cmc1);
    i2v_map.push_back(pipe.student_i2v.map);
    v2v_cmc1.push_back(pipe.student_v2v.cmc1);
    v2v_map.push_back(pipe.student_v2v.map);
    per_seed.push_back(json{{"seed", seed},
                            {"student_i2v", eval_report_json(pipe.student_i2v)},
                            {"student_v2v", eval_report_json(pipe.student_v2v)},
                            {"teacher_i2v", eval_report_json(pipe.teacher_i2v)},
                            {"teacher_v2v", eval_report_json(pipe.teacher_v2v)},
                            {"final_total_loss", pipe.final_total_loss}});
  }

  json result{{"label", row.label},
              {"toggles", row_toggles(row)},
              {"seed_count", n_seeds},
              {"config_digest", digest},
              {"per_seed", per_seed},
              {"i2v_cmc1_mean", mean_of(i2v_cmc1)},
              {"i2v_cmc1_std", std_of(i2v_cmc1)},
              {"i2v_map_mean", mean_of(i2v_map)},
              {"i2v_map_std", std_of(i2v_map)},
              {"v2v_cmc1_mean", mean_of(v2v_cmc1)},
              {"v2v_cmc1_std", std_of(v2v_cmc1)},
              {"v2v_map_mean", mean_of(v2v_map)},
              {"v2v_map_std", std_of(v2v_map)}};
  write_text(row_file, result.dump(2));
  return result;
}

}  // namespace

AblationTable run_ablation(const RunConfig& base, const std::string& suite, std::uint32_t n_seeds,
                           std::uint32_t jobs) {
  if (n_seeds < 1) throw ConfigError("ablate: need at least one seed");
  const std::vector<AblationRowSpec> rows = ablation_rows(suite, base.distill_train.loss);
  const std::string root = base.run_dir() + "/ablate-" + suite;
  fs::create_directories(root);
  const std::string digest = base.digest();

  const Dataset dataset = base.materialize_dataset();

  // teachers depend only on the seed; all rows share them
  std::vector<std::string> teacher_ckpts(n_seeds);
  for (std::uint32_t seed = 0; seed < n_seeds; ++seed) {
    teacher_ckpts[seed] =
        train_cached_teacher(base, dataset, seed, root + "/teachers/seed" + std::to_string(seed));
  }

  std::vector<json> row_results(rows.size());
  std::vector<std::exception_ptr> row_errors(rows.size());
  const std::uint32_t parallel = std::max(1u, jobs);
  for (std::size_t begin = 0; begin < rows.size(); begin += parallel) {
    const std::size_t end = std::min(rows.size(), begin + parallel);
    std::vector<std::thread> workers;
    for (std::size_t i = begin; i < end; ++i) {
      workers.emplace_back([&, i] {
        try {
          row_results[i] =
              run_ablation_row(base, dataset, rows[i], n_seeds, root, teacher_ckpts, digest);
        } catch (...) {
          row_errors[i] = std::current_exception();
        }
      });
    }
    for (std::thread& w : workers) w.join();
  }
  for (const auto& err : row_errors) {
    if (err) std::rethrow_exception(err);
  }

  AblationTable out;
  out.suite = suite;
  json table{{"suite", suite},
             {"seed_count", n_seeds},
             {"config_digest", digest},
             {"rows", row_results}};
  out.table = table;

  std::ostringstream csv;
  csv << "label,seed_count,i2v_cmc1_mean,i2v_cmc1_std,i2v_map_mean,i2v_map_std,"
         "v2v_cmc1_mean,v2v_cmc1_std,v2v_map_mean,v2v_map_std\n";
  for (const json& row : row_results) {
    csv << row.at("label").get<std::string>() << ',' << n_seeds << ','
        << num(row.at("i2v_cmc1_mean").get<double>()) << ','
        << num(row.at("i2v_cmc1_std").get<double>()) << ','
        << num(row.at("i2v_map_mean").get<double>()) << ','
        << num(row.at("i2v_map_std").get<double>()) << ','
        << num(row.at("v2v_cmc1_mean").get<double>()) << ','
        << num(row.at("v2v_cmc1_std").get<double>()) << ','
        << num(row.at("v2v_map_mean").get<double>()) << ','
        << num(row.at("v2v_map_std").get<double>()) << '\n';
  }
  out.csv = csv.str();

  write_text(root + "/" + suite + ".json", out.table.dump(2));
  write_text(root + "/" + suite + ".csv", out.csv);
  return out;
}

// ----- gradient-check suite ----------------------------------------------

namespace {

struct GradBatch {
  std::vector<std::uint32_t> labels;
  Tensor teacher_emb;
  Tensor student_emb;
  Tensor teacher_logits;
  Tensor student_logits;
};

GradBatch make_grad_batch(std::uint64_t seed) {
  constexpr std::size_t kIdentities = 3, kPerIdentity = 2, kDim = 6, kClasses = 8;
  constexpr std::size_t b = kIdentities * kPerIdentity;
  Rng rng(derive_seed(0x9d5ful, seed));
  GradBatch batch;
  for (std::size_t i = 0; i < b; ++i) {
    batch.labels.push_back(static_cast<std::uint32_t>(i / kPerIdentity));
  }
  auto rand_tensor = [&](Shape shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    std::vector<double> data(n);
    for (double& v : data) v = rng.gaussian();
    return Tensor::from_data(std::move(shape), std::move(data), true);
  };
  batch.teacher_emb = rand_tensor({b, kDim});
  batch.student_emb = rand_tensor({b, kDim});
  batch.teacher_logits = rand_tensor({b, kClasses});
  batch.student_logits = rand_tensor({b, kClasses});
  return batch;
}

// Directed terms are verified against their learner side; the frozen-target
// side is pinned to exactly zero by the detachment contract checks, so the
// two together cover the mutual losses.
double loss_zoo_max_err(const std::string& name, std::uint64_t seed) {
  GradBatch batch = make_grad_batch(seed);
  const auto labels = batch.labels;
  constexpr double kStep = 1e-5;

  if (name == "ce_loss") {
    return grad_check(
        [&labels](Tape* t, const Tensor& logits) { return ce_loss(t, logits, labels); },
        batch.student_logits, kStep);
  }
  if (name == "triplet_loss") {
    return grad_check(
        [&labels](Tape* t, const Tensor& emb) {
          Tensor dist = pairwise_sq_euclidean(t, emb);
          return triplet_loss(t, dist, batch_hard_triplets(dist, labels), 0.3);
        },
        batch.student_emb, kStep);
  }
  if (name == "kd_t2s") {
    const Tensor target = batch.teacher_logits.detach();
    return grad_check(
        [&target](Tape* t, const Tensor& learner) { return kd_directed(t, target, learner, 10.0); },
        batch.student_logits, kStep);
  }
  if (name == "kd_s2t") {
    const Tensor target = batch.student_logits.detach();
    return grad_check(
        [&target](Tape* t, const Tensor& learner) { return kd_directed(t, target, learner, 10.0); },
        batch.teacher_logits, kStep);
  }
  if (name == "pd_loss") {
    const Tensor inputs[2] = {batch.teacher_emb, batch.student_emb};
    return grad_check(
        [](Tape* t, std::span<const Tensor> in) { return pd_loss(t, in[0], in[1]); }, inputs,
        kStep);
  }
  if (name == "triplet_probability") {
    Rng rng(derive_seed(0xabcul, seed));
    Tensor d_ap = Tensor::from_data({1}, {1.0 + rng.uniform() * 4.0}, true);
    Tensor d_an = Tensor::from_data({1}, {1.0 + rng.uniform() * 4.0}, true);
    const Tensor inputs[2] = {d_ap, d_an};
    return grad_check(
        [](Tape* t, std::span<const Tensor> in) {
          return triplet_probability(t, in[0], in[1], 4.0).p;
        },
        inputs, kStep);
  }
  if (name == "tcl_t2s") {
    const Tensor teacher = batch.teacher_emb.detach();
    return grad_check(
        [&teacher, &labels](Tape* t, const Tensor& student) {
          return mutual_tcl(t, teacher, student, labels, 4.0, false);
        },
        batch.student_emb, kStep);
  }
  if (name == "tcl_s2t") {
    // student side frozen: mine on the student matrix, fix the two-point
    // target rows, differentiate the teacher pathway only
    const Tensor student = batch.student_emb.detach();
    const Tensor dist_s = pairwise_sq_euclidean(nullptr, student);
    const TripletIndices mined = batch_hard_triplets(dist_s, labels);
    const std::size_t b = student.rows();
    std::vector<std::size_t> ap, an;
    for (const auto& tr : mined.triplets) {
      ap.push_back(tr.anchor * b + tr.positive);
      an.push_back(tr.anchor * b + tr.negative);
    }
    Tensor p_s = triplet_probability(nullptr, select(nullptr, dist_s, ap),
                                     select(nullptr, dist_s, an), 4.0)
                     .p;
    const Tensor target_p = p_s.detach();
    return grad_check(
        [&](Tape* t, const Tensor& teacher) {
          Tensor dist_t = pairwise_sq_euclidean(t, teacher);
          TripletProbabilityPair pt =
              triplet_probability(t, select(t, dist_t, ap), select(t, dist_t, an), 4.0);
          const Tensor target_cols[2] = {
              target_p, add_scalar(t, scale(t, target_p, -1.0), 1.0)};
          const Tensor learner_cols[2] = {pt.p, pt.complement};
          return kl_divergence(t, stack_cols(t, target_cols), stack_cols(t, learner_cols));
        },
        batch.teacher_emb, kStep);
  }
  if (name == "total_objective_student") {
    // all four terms live through the student; detached targets are teacher
    // constants so finite differences see exactly the implemented gradient
    NetworkOutput teacher{batch.teacher_emb.detach(), batch.teacher_logits.detach()};
    LossConfig cfg;
    cfg.mutual = false;
    cfg.use_ce = true;
    const Tensor inputs[2] = {batch.student_emb, batch.student_logits};
    return grad_check(
        [&](Tape* t, std::span<const Tensor> in) {
          NetworkOutput student{in[0], in[1]};
          return total_objective(t, teacher, student, labels, cfg).total;
        },
        inputs, kStep);
  }
  if (name == "total_objective_teacher") {
    // the teacher-live pathways of the combined objective
    NetworkOutput student{batch.student_emb.detach(), batch.student_logits.detach()};
    LossConfig cfg;
    cfg.use_mkd = false;
    cfg.use_mtcl = false;
    cfg.use_ce = true;
    const Tensor inputs[2] = {batch.teacher_emb, batch.teacher_logits};
    return grad_check(
        [&](Tape* t, std::span<const Tensor> in) {
          NetworkOutput teacher{in[0], in[1]};
          return total_objective(t, teacher, student, labels, cfg).total;
        },
        inputs, kStep);
  }
  throw UsageError("unknown gradient check: " + name);
}

}  // namespace

json grad_check_report() {
  constexpr double kTolerance = 1e-4;
  constexpr int kBatches = 20;
  const std::vector<std::string> names = {
      "ce_loss",  "triplet_loss", "kd_t2s",  "kd_s2t",
      "pd_loss",  "triplet_probability", "tcl_t2s", "tcl_s2t",
      "total_objective_student", "total_objective_teacher"};

  const auto t0 = std::chrono::steady_clock::now();
  json losses = json::array();
  bool all_pass = true;
  for (const std::string& name : names) {
    double worst = 0.0;
    for (int b = 0; b < kBatches; ++b) {
      worst = std::max(worst, loss_zoo_max_err(name, static_cast<std::uint64_t>(b)));
    }
    const bool pass = worst < kTolerance;
    all_pass = all_pass && pass;
    losses.push_back(json{{"name", name}, {"max_rel_err", worst}, {"pass", pass}});
  }
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return json{{"step", 1e-5},
              {"tolerance", kTolerance},
              {"batches_per_loss", kBatches},
              {"losses", losses},
              {"all_pass", all_pass},
              {"elapsed_s", elapsed}};
}

}  // namespace mdkt
