#include "mdkt/mdkt.h"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <string>

#include "experiments.hpp"

using nlohmann::json;

struct mdkt_dataset {
  mdkt::Dataset value;
};

struct mdkt_model {
  mdkt::EmbeddingNet value;
};

namespace {

thread_local std::string g_last_error;

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out != nullptr) std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

template <typename Fn>
mdkt_status guard(Fn&& fn) {
  g_last_error.clear();
  try {
    return fn();
  } catch (const mdkt::NumericError& e) {
    g_last_error = e.what();
    return MDKT_ERR_NUMERIC;
  } catch (const mdkt::IoError& e) {
    g_last_error = e.what();
    return MDKT_ERR_IO;
  } catch (const mdkt::ConfigError& e) {
    g_last_error = e.what();
    return MDKT_ERR_CONFIG;
  } catch (const mdkt::UsageError& e) {
    g_last_error = e.what();
    return MDKT_ERR_CONFIG;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return MDKT_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return MDKT_ERR_INTERNAL;
  }
}

mdkt::RunConfig parse_run_config(const char* text) {
  if (text == nullptr) throw mdkt::ConfigError("config JSON is null");
  return mdkt::RunConfig::from_json_text(text);
}

// Accepts either a full run configuration or a bare dataset section.
mdkt::RunConfig parse_dataset_config(const char* text) {
  if (text == nullptr) throw mdkt::ConfigError("config JSON is null");
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw mdkt::ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (doc.is_object() && !doc.contains("dataset")) {
    doc = json{{"dataset", doc}};
  }
  return mdkt::RunConfig::from_json(doc);
}

std::string resolve_teacher_checkpoint(const mdkt::RunConfig& cfg) {
  const std::string path =
      cfg.teacher_checkpoint ? *cfg.teacher_checkpoint : cfg.run_dir() + "/teacher-final.ckpt";
  if (!std::filesystem::exists(path)) {
    throw mdkt::ConfigError("teacher checkpoint not found: " + path +
                            " (run train-teacher first or set teacher_checkpoint)");
  }
  return path;
}

json step_summary(const mdkt::StepRecord& r) {
  return json{{"step", r.step}, {"total", r.total}, {"tr", r.tr},     {"mkd", r.mkd},
              {"pd", r.pd},     {"mtcl", r.mtcl},   {"ce", r.ce}};
}

}  // namespace

extern "C" {

const char* mdkt_version(void) { return "1.0.0"; }

const char* mdkt_last_error(void) { return g_last_error.c_str(); }

void mdkt_string_free(char* s) { std::free(s); }

mdkt_status mdkt_dataset_generate(const char* config_json, mdkt_dataset** out) {
  return guard([&]() {
    if (out == nullptr) throw mdkt::ConfigError("output handle is null");
    const mdkt::RunConfig cfg = parse_dataset_config(config_json);
    auto handle = new mdkt_dataset{mdkt::generate(cfg.dataset)};
    *out = handle;
    return MDKT_OK;
  });
}

mdkt_status mdkt_dataset_load(const char* path, mdkt_dataset** out) {
  return guard([&]() {
    if (path == nullptr || out == nullptr) throw mdkt::ConfigError("null argument");
    *out = new mdkt_dataset{mdkt::load(path)};
    return MDKT_OK;
  });
}

mdkt_status mdkt_dataset_save(const mdkt_dataset* dataset, const char* path) {
  return guard([&]() {
    if (dataset == nullptr || path == nullptr) throw mdkt::ConfigError("null argument");
    mdkt::save(dataset->value, path);
    return MDKT_OK;
  });
}

mdkt_status mdkt_dataset_summary(const mdkt_dataset* dataset, char** json_out) {
  return guard([&]() {
    if (dataset == nullptr || json_out == nullptr) throw mdkt::ConfigError("null argument");
    const mdkt::Dataset& ds = dataset->value;
    json summary{{"n_train_clips", ds.train_clips.size()},
                 {"n_test_clips", ds.test_clips.size()},
                 {"n_train_ids", ds.train_identities().size()},
                 {"n_test_ids", ds.test_identities().size()},
                 {"frames_per_clip", ds.config.frames_per_clip},
                 {"frame_dim", ds.config.frame_dim},
                 {"seed", ds.config.seed}};
    *json_out = dup_string(summary.dump(2));
    return MDKT_OK;
  });
}

void mdkt_dataset_free(mdkt_dataset* dataset) { delete dataset; }

mdkt_status mdkt_model_load(const char* path, mdkt_model** out) {
  return guard([&]() {
    if (path == nullptr || out == nullptr) throw mdkt::ConfigError("null argument");
    *out = new mdkt_model{mdkt::load_checkpoint(path)};
    return MDKT_OK;
  });
}

mdkt_status mdkt_model_save(const mdkt_model* model, const char* path) {
  return guard([&]() {
    if (model == nullptr || path == nullptr) throw mdkt::ConfigError("null argument");
    mdkt::save_checkpoint(model->value, path);
    return MDKT_OK;
  });
}

void mdkt_model_free(mdkt_model* model) { delete model; }

mdkt_status mdkt_train_teacher(const char* run_config_json, char** report_json) {
  return guard([&]() {
    if (report_json == nullptr) throw mdkt::ConfigError("null report argument");
    const mdkt::RunConfig cfg = parse_run_config(run_config_json);
    const mdkt::Dataset dataset = cfg.materialize_dataset();
    const mdkt::TrainResult result =
        mdkt::train_teacher(dataset, cfg.teacher_train, cfg.model, cfg.run_dir());
    json report{{"stage", "teacher"},
                {"run_dir", cfg.run_dir()},
                {"final_checkpoint", result.final_checkpoint},
                {"steps", result.log.size()},
                {"final", result.log.empty() ? json() : step_summary(result.log.back())},
                {"seed", cfg.teacher_train.seed},
                {"config_digest", cfg.digest()}};
    *report_json = dup_string(report.dump(2));
    return MDKT_OK;
  });
}

mdkt_status mdkt_distill(const char* run_config_json, char** report_json) {
  return guard([&]() {
    if (report_json == nullptr) throw mdkt::ConfigError("null report argument");
    const mdkt::RunConfig cfg = parse_run_config(run_config_json);
    const mdkt::Dataset dataset = cfg.materialize_dataset();
    const std::string teacher_path = resolve_teacher_checkpoint(cfg);
    const mdkt::EmbeddingNet teacher = mdkt::load_checkpoint(teacher_path);
    const mdkt::TrainResult result =
        mdkt::distill(teacher, dataset, cfg.distill_train, cfg.run_dir());
    json report{{"stage", "distill"},
                {"run_dir", cfg.run_dir()},
                {"teacher_checkpoint_in", teacher_path},
                {"final_checkpoint", result.final_checkpoint},
                {"final_teacher_checkpoint", result.final_teacher_checkpoint},
                {"steps", result.log.size()},
                {"final", result.log.empty() ? json() : step_summary(result.log.back())},
                {"freeze_teacher", cfg.distill_train.freeze_teacher},
                {"seed", cfg.distill_train.seed},
                {"config_digest", cfg.digest()}};
    *report_json = dup_string(report.dump(2));
    return MDKT_OK;
  });
}

mdkt_status mdkt_evaluate(const char* run_config_json, const char* checkpoint_path,
                          const char* network, char** report_json) {
  return guard([&]() {
    if (checkpoint_path == nullptr || report_json == nullptr) {
      throw mdkt::ConfigError("null argument");
    }
    const std::string net_name = network == nullptr ? "student" : network;
    if (net_name != "teacher" && net_name != "student") {
      throw mdkt::ConfigError("network must be \"teacher\" or \"student\", got \"" + net_name +
                              "\"");
    }
    const mdkt::RunConfig cfg = parse_run_config(run_config_json);
    const mdkt::Dataset dataset = cfg.materialize_dataset();
    const mdkt::EmbeddingNet net = mdkt::load_checkpoint(checkpoint_path);

    mdkt::EvalProtocol protocol;
    protocol.network =
        net_name == "teacher" ? mdkt::EvalNetwork::kTeacher : mdkt::EvalNetwork::kStudent;
    protocol.distance = cfg.eval.distance;
    protocol.exclude_same_camera = cfg.eval.exclude_same_camera;

    protocol.mode = mdkt::EvalMode::kImageToVideo;
    const mdkt::EvalReport i2v = mdkt::evaluate(net, dataset, protocol);
    protocol.mode = mdkt::EvalMode::kVideoToVideo;
    const mdkt::EvalReport v2v = mdkt::evaluate(net, dataset, protocol);

    const std::string digest = cfg.digest();
    const std::uint64_t seed = cfg.distill_train.seed;
    json report{{"checkpoint", checkpoint_path},
                {"network", net_name},
                {"config_digest", digest},
                {"i2v", mdkt::report_to_json(i2v, seed, digest)},
                {"v2v", mdkt::report_to_json(v2v, seed, digest)}};
    *report_json = dup_string(report.dump(2));
    return MDKT_OK;
  });
}

mdkt_status mdkt_ablate(const char* run_config_json, const char* suite, unsigned n_seeds,
                        unsigned jobs, char** table_json) {
  return guard([&]() {
    if (suite == nullptr || table_json == nullptr) throw mdkt::ConfigError("null argument");
    const mdkt::RunConfig cfg = parse_run_config(run_config_json);
    const mdkt::AblationTable table = mdkt::run_ablation(cfg, suite, n_seeds, jobs);
    json out{{"suite", table.suite}, {"table", table.table}, {"csv", table.csv}};
    *table_json = dup_string(out.dump(2));
    return MDKT_OK;
  });
}

mdkt_status mdkt_grad_check(char** report_json) {
  return guard([&]() {
    if (report_json == nullptr) throw mdkt::ConfigError("null report argument");
    const json report = mdkt::grad_check_report();
    *report_json = dup_string(report.dump(2));
    return report.at("all_pass").get<bool>() ? MDKT_OK : MDKT_ERR_NUMERIC;
  });
}

}  // extern "C"
