#include "run_config.hpp"

#include <cstdint>
#include <set>

namespace mdkt {

using nlohmann::json;

namespace {

void require_object(const json& j, const std::string& section) {
  if (!j.is_object()) throw ConfigError("field " + section + ": expected an object");
}

void reject_unknown(const json& obj, const std::string& section,
                    const std::set<std::string>& allowed) {
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.contains(key)) {
      throw ConfigError("unknown config field " + section + "." + key);
    }
  }
}

double get_real(const json& obj, const std::string& section, const std::string& key,
                double fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number()) throw ConfigError("field " + section + "." + key + ": expected a number");
  return v.get<double>();
}

std::uint32_t get_u32(const json& obj, const std::string& section, const std::string& key,
                      std::uint32_t fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0 ||
      v.get<std::int64_t>() > 0xffffffffll) {
    throw ConfigError("field " + section + "." + key + ": expected an unsigned 32-bit integer");
  }
  return v.get<std::uint32_t>();
}

std::uint64_t get_u64(const json& obj, const std::string& section, const std::string& key,
                      std::uint64_t fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number_integer()) {
    throw ConfigError("field " + section + "." + key + ": expected an integer");
  }
  return v.get<std::uint64_t>();
}

bool get_bool(const json& obj, const std::string& section, const std::string& key, bool fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_boolean()) throw ConfigError("field " + section + "." + key + ": expected a boolean");
  return v.get<bool>();
}

std::string get_string(const json& obj, const std::string& section, const std::string& key,
                       const std::string& fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_string()) throw ConfigError("field " + section + "." + key + ": expected a string");
  return v.get<std::string>();
}

DatasetConfig parse_dataset(const json& obj) {
  DatasetConfig c;
  const std::string s = "dataset";
  require_object(obj, s);
  reject_unknown(obj, s,
                 {"n_train_ids", "n_test_ids", "n_cameras", "frames_per_clip",
                  "clips_per_id_per_camera", "latent_dim", "frame_dim", "identity_scale",
                  "camera_scale", "noise_scale", "seed"});
  c.n_train_ids = get_u32(obj, s, "n_train_ids", c.n_train_ids);
  c.n_test_ids = get_u32(obj, s, "n_test_ids", c.n_test_ids);
  c.n_cameras = get_u32(obj, s, "n_cameras", c.n_cameras);
  c.frames_per_clip = get_u32(obj, s, "frames_per_clip", c.frames_per_clip);
  c.clips_per_id_per_camera = get_u32(obj, s, "clips_per_id_per_camera", c.clips_per_id_per_camera);
  c.latent_dim = get_u32(obj, s, "latent_dim", c.latent_dim);
  c.frame_dim = get_u32(obj, s, "frame_dim", c.frame_dim);
  c.identity_scale = get_real(obj, s, "identity_scale", c.identity_scale);
  c.camera_scale = get_real(obj, s, "camera_scale", c.camera_scale);
  c.noise_scale = get_real(obj, s, "noise_scale", c.noise_scale);
  c.seed = get_u64(obj, s, "seed", c.seed);
  c.validate();
  return c;
}

ModelConfig parse_model(const json& obj, const DatasetConfig& dataset) {
  ModelConfig c;
  const std::string s = "model";
  require_object(obj, s);
  reject_unknown(obj, s, {"layer_dims", "n_classes", "init_seed", "normalize_embeddings"});
  if (obj.contains("layer_dims")) {
    const json& dims = obj.at("layer_dims");
    if (!dims.is_array() || dims.size() < 3) {
      throw ConfigError("field model.layer_dims: expected an array of at least 3 dims");
    }
    c.layer_dims.clear();
    for (const json& d : dims) {
      if (!d.is_number_integer() || d.get<std::int64_t>() < 1) {
        throw ConfigError("field model.layer_dims: dims must be positive integers");
      }
      c.layer_dims.push_back(d.get<std::uint32_t>());
    }
  } else {
    c.layer_dims = {dataset.frame_dim, 64, 32};
  }
  c.n_classes = get_u32(obj, s, "n_classes", dataset.n_train_ids);
  c.init_seed = get_u64(obj, s, "init_seed", c.init_seed);
  c.normalize_embeddings = get_bool(obj, s, "normalize_embeddings", c.normalize_embeddings);
  if (c.layer_dims.front() != dataset.frame_dim) {
    throw ConfigError("field model.layer_dims: input dim " + std::to_string(c.layer_dims.front()) +
                      " does not match dataset.frame_dim " + std::to_string(dataset.frame_dim));
  }
  c.validate();
  return c;
}

BatchSpec parse_batch(const json& obj) {
  BatchSpec b;
  const std::string s = "batch";
  require_object(obj, s);
  reject_unknown(obj, s, {"P", "K", "N", "M"});
  b.identities_per_batch = get_u32(obj, s, "P", b.identities_per_batch);
  b.clips_per_identity = get_u32(obj, s, "K", b.clips_per_identity);
  b.teacher_views = get_u32(obj, s, "N", b.teacher_views);
  b.student_views = get_u32(obj, s, "M", b.student_views);
  return b;
}

LossConfig parse_loss(const json& obj) {
  LossConfig c;
  const std::string s = "loss";
  require_object(obj, s);
  reject_unknown(obj, s,
                 {"tau1", "tau2", "margin", "weight_mkd", "weight_pd", "weight_mtcl", "use_tr",
                  "use_mkd", "use_pd", "use_mtcl", "use_ce", "mutual"});
  c.tau1 = get_real(obj, s, "tau1", c.tau1);
  c.tau2 = get_real(obj, s, "tau2", c.tau2);
  c.margin = get_real(obj, s, "margin", c.margin);
  c.weight_mkd = get_real(obj, s, "weight_mkd", c.weight_mkd);
  c.weight_pd = get_real(obj, s, "weight_pd", c.weight_pd);
  c.weight_mtcl = get_real(obj, s, "weight_mtcl", c.weight_mtcl);
  c.use_tr = get_bool(obj, s, "use_tr", c.use_tr);
  c.use_mkd = get_bool(obj, s, "use_mkd", c.use_mkd);
  c.use_pd = get_bool(obj, s, "use_pd", c.use_pd);
  c.use_mtcl = get_bool(obj, s, "use_mtcl", c.use_mtcl);
  c.use_ce = get_bool(obj, s, "use_ce", c.use_ce);
  c.mutual = get_bool(obj, s, "mutual", c.mutual);
  c.validate();
  return c;
}

TrainConfig parse_train(const json& obj, const std::string& s, TrainConfig defaults) {
  TrainConfig c = defaults;
  require_object(obj, s);
  reject_unknown(obj, s,
                 {"epochs", "steps_per_epoch", "learning_rate", "adam_beta1", "adam_beta2",
                  "adam_eps", "seed", "checkpoint_every", "freeze_teacher"});
  c.epochs = get_u32(obj, s, "epochs", c.epochs);
  c.steps_per_epoch = get_u32(obj, s, "steps_per_epoch", c.steps_per_epoch);
  c.adam.learning_rate = get_real(obj, s, "learning_rate", c.adam.learning_rate);
  c.adam.beta1 = get_real(obj, s, "adam_beta1", c.adam.beta1);
  c.adam.beta2 = get_real(obj, s, "adam_beta2", c.adam.beta2);
  c.adam.epsilon = get_real(obj, s, "adam_eps", c.adam.epsilon);
  c.seed = get_u64(obj, s, "seed", c.seed);
  c.checkpoint_every = get_u32(obj, s, "checkpoint_every", c.checkpoint_every);
  c.freeze_teacher = get_bool(obj, s, "freeze_teacher", c.freeze_teacher);
  return c;
}

EvalSettings parse_eval(const json& obj) {
  EvalSettings e;
  const std::string s = "eval";
  require_object(obj, s);
  reject_unknown(obj, s, {"distance", "exclude_same_camera"});
  const std::string dist = get_string(obj, s, "distance", "euclidean");
  if (dist == "euclidean") {
    e.distance = EvalDistance::kEuclidean;
  } else if (dist == "sq_euclidean") {
    e.distance = EvalDistance::kSqEuclidean;
  } else {
    throw ConfigError("field eval.distance: expected \"euclidean\" or \"sq_euclidean\"");
  }
  e.exclude_same_camera = get_bool(obj, s, "exclude_same_camera", e.exclude_same_camera);
  return e;
}

}  // namespace

RunConfig RunConfig::from_json_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return from_json(doc);
}

RunConfig RunConfig::from_json(const json& doc) {
  require_object(doc, "(root)");
  reject_unknown(doc, "(root)",
                 {"run_name", "output_dir", "dataset", "dataset_path", "model", "batch",
                  "teacher_train", "distill_train", "loss", "eval", "teacher_checkpoint"});

  RunConfig cfg;
  cfg.run_name = get_string(doc, "(root)", "run_name", cfg.run_name);
  cfg.output_dir = get_string(doc, "(root)", "output_dir", cfg.output_dir);
  if (doc.contains("dataset_path")) {
    cfg.dataset_path = get_string(doc, "(root)", "dataset_path", "");
  }
  if (doc.contains("teacher_checkpoint")) {
    cfg.teacher_checkpoint = get_string(doc, "(root)", "teacher_checkpoint", "");
  }

  cfg.dataset = doc.contains("dataset") ? parse_dataset(doc.at("dataset")) : DatasetConfig{};
  cfg.model = parse_model(doc.contains("model") ? doc.at("model") : json::object(), cfg.dataset);
  cfg.batch = doc.contains("batch") ? parse_batch(doc.at("batch")) : BatchSpec{};

  const LossConfig loss = doc.contains("loss") ? parse_loss(doc.at("loss")) : LossConfig{};

  TrainConfig teacher_defaults;
  teacher_defaults.stage = TrainStage::kTeacher;
  teacher_defaults.epochs = 60;
  cfg.teacher_train = parse_train(
      doc.contains("teacher_train") ? doc.at("teacher_train") : json::object(), "teacher_train",
      teacher_defaults);
  cfg.teacher_train.stage = TrainStage::kTeacher;

  TrainConfig distill_defaults;
  distill_defaults.stage = TrainStage::kDistill;
  distill_defaults.epochs = 30;
  cfg.distill_train = parse_train(
      doc.contains("distill_train") ? doc.at("distill_train") : json::object(), "distill_train",
      distill_defaults);
  cfg.distill_train.stage = TrainStage::kDistill;

  cfg.teacher_train.batch_spec = cfg.batch;
  cfg.distill_train.batch_spec = cfg.batch;
  cfg.teacher_train.loss = loss;
  cfg.distill_train.loss = loss;

  cfg.eval = parse_eval(doc.contains("eval") ? doc.at("eval") : json::object());
  cfg.validate();
  return cfg;
}

void RunConfig::validate() const {
  if (run_name.empty()) throw ConfigError("field run_name: must not be empty");
  dataset.validate();
  model.validate();
  batch.validate(dataset.frames_per_clip);
  teacher_train.validate(dataset.frames_per_clip);
  distill_train.validate(dataset.frames_per_clip);
}

json RunConfig::to_json() const {
  json train_t{{"epochs", teacher_train.epochs},
               {"steps_per_epoch", teacher_train.steps_per_epoch},
               {"learning_rate", teacher_train.adam.learning_rate},
               {"adam_beta1", teacher_train.adam.beta1},
               {"adam_beta2", teacher_train.adam.beta2},
               {"adam_eps", teacher_train.adam.epsilon},
               {"seed", teacher_train.seed},
               {"checkpoint_every", teacher_train.checkpoint_every}};
  json train_d{{"epochs", distill_train.epochs},
               {"steps_per_epoch", distill_train.steps_per_epoch},
               {"learning_rate", distill_train.adam.learning_rate},
               {"adam_beta1", distill_train.adam.beta1},
               {"adam_beta2", distill_train.adam.beta2},
               {"adam_eps", distill_train.adam.epsilon},
               {"seed", distill_train.seed},
               {"checkpoint_every", distill_train.checkpoint_every},
               {"freeze_teacher", distill_train.freeze_teacher}};
  const LossConfig& l = distill_train.loss;
  json doc{
      {"run_name", run_name},
      {"output_dir", output_dir},
      {"dataset",
       {{"n_train_ids", dataset.n_train_ids},
        {"n_test_ids", dataset.n_test_ids},
        {"n_cameras", dataset.n_cameras},
        {"frames_per_clip", dataset.frames_per_clip},
        {"clips_per_id_per_camera", dataset.clips_per_id_per_camera},
        {"latent_dim", dataset.latent_dim},
        {"frame_dim", dataset.frame_dim},
        {"identity_scale", dataset.identity_scale},
        {"camera_scale", dataset.camera_scale},
        {"noise_scale", dataset.noise_scale},
        {"seed", dataset.seed}}},
      {"model",
       {{"layer_dims", model.layer_dims},
        {"n_classes", model.n_classes},
        {"init_seed", model.init_seed},
        {"normalize_embeddings", model.normalize_embeddings}}},
      {"batch",
       {{"P", batch.identities_per_batch},
        {"K", batch.clips_per_identity},
        {"N", batch.teacher_views},
        {"M", batch.student_views}}},
      {"teacher_train", train_t},
      {"distill_train", train_d},
      {"loss",
       {{"tau1", l.tau1},
        {"tau2", l.tau2},
        {"margin", l.margin},
        {"weight_mkd", l.weight_mkd},
        {"weight_pd", l.weight_pd},
        {"weight_mtcl", l.weight_mtcl},
        {"use_tr", l.use_tr},
        {"use_mkd", l.use_mkd},
        {"use_pd", l.use_pd},
        {"use_mtcl", l.use_mtcl},
        {"use_ce", l.use_ce},
        {"mutual", l.mutual}}},
      {"eval",
       {{"distance", eval.distance == EvalDistance::kEuclidean ? "euclidean" : "sq_euclidean"},
        {"exclude_same_camera", eval.exclude_same_camera}}},
  };
  if (dataset_path) doc["dataset_path"] = *dataset_path;
  if (teacher_checkpoint) doc["teacher_checkpoint"] = *teacher_checkpoint;
  return doc;
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string RunConfig::digest() const { return fnv1a_hex(to_json().dump()); }

std::string RunConfig::run_dir() const {
  if (output_dir.empty()) return run_name;
  return output_dir + "/" + run_name;
}

Dataset RunConfig::materialize_dataset() const {
  if (dataset_path) return load(*dataset_path);
  return generate(dataset);
}

}  // namespace mdkt
