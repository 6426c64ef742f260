// Command-line front end over the mdkt C API: data generation, the two
// training stages, retrieval evaluation, the ablation suites, and the
// gradient-check release gate.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "mdkt/mdkt.h"

namespace {

using nlohmann::json;

constexpr int kExitConfig = 2;
constexpr int kExitIo = 4;

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output;
};

void add_common(CLI::App* cmd, CommonFlags& flags, bool config_required = true) {
  auto* opt = cmd->add_option("--config", flags.config_path, "run configuration JSON file");
  if (config_required) opt->required();
  cmd->add_option("--seed", flags.seed, "override the training seeds");
  cmd->add_option("--output", flags.output, "override the output directory");
}

// Reads the config file and applies flag overrides. Precedence:
// flags > config file > MDKT_OUTPUT_DIR > defaults.
json load_config(const CommonFlags& flags) {
  json doc = json::object();
  if (!flags.config_path.empty()) {
    std::ifstream in(flags.config_path);
    if (!in) {
      std::cerr << "error: cannot open config file: " << flags.config_path << "\n";
      std::exit(kExitIo);
    }
    std::ostringstream text;
    text << in.rdbuf();
    try {
      doc = json::parse(text.str());
    } catch (const json::parse_error& e) {
      std::cerr << "error: config is not valid JSON: " << e.what() << "\n";
      std::exit(kExitConfig);
    }
    if (!doc.is_object()) {
      std::cerr << "error: config root must be a JSON object\n";
      std::exit(kExitConfig);
    }
  }
  if (flags.seed) {
    doc["teacher_train"]["seed"] = *flags.seed;
    doc["distill_train"]["seed"] = *flags.seed;
  }
  if (flags.output) {
    doc["output_dir"] = *flags.output;
  } else if (!doc.contains("output_dir")) {
    if (const char* env = std::getenv("MDKT_OUTPUT_DIR")) doc["output_dir"] = env;
  }
  return doc;
}

int fail(mdkt_status status) {
  std::cerr << "error: " << mdkt_last_error() << "\n";
  return static_cast<int>(status);
}

int print_report(mdkt_status status, char* report) {
  if (report != nullptr) {
    std::cout << report << "\n";
    mdkt_string_free(report);
  }
  if (status != MDKT_OK) std::cerr << "error: " << mdkt_last_error() << "\n";
  return static_cast<int>(status);
}

std::string run_dir_of(const json& doc) {
  const std::string out = doc.value("output_dir", "");
  const std::string name = doc.value("run_name", "run");
  return out.empty() ? name : out + "/" + name;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mutual-distillation metric-learning engine"};
  app.require_subcommand(1);

  CommonFlags gen_flags, teacher_flags, distill_flags, eval_flags, ablate_flags;
  bool freeze_teacher = false;
  std::string eval_checkpoint;
  std::string eval_network = "student";
  std::string ablate_suite;
  unsigned ablate_seeds = 5;
  unsigned jobs = 1;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset file");
  add_common(gen, gen_flags);

  auto* teacher = app.add_subcommand("train-teacher", "stage 1: train the video teacher");
  add_common(teacher, teacher_flags);

  auto* dist = app.add_subcommand("distill", "stage 2: mutual teacher/student distillation");
  add_common(dist, distill_flags);
  dist->add_flag("--freeze-teacher", freeze_teacher, "keep teacher parameters fixed");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint (I2V and V2V retrieval)");
  add_common(eval, eval_flags);
  eval->add_option("checkpoint", eval_checkpoint, "checkpoint file to evaluate")->required();
  eval->add_option("--network", eval_network, "report label: teacher or student")
      ->check(CLI::IsMember({"teacher", "student"}));

  auto* ablate = app.add_subcommand("ablate", "run an ablation suite");
  ablate->add_option("suite", ablate_suite, "loss_terms, mutual, or ce")->required();
  add_common(ablate, ablate_flags);
  ablate->add_option("--seeds", ablate_seeds, "seeds per row");
  ablate->add_option("--jobs", jobs, "rows trained concurrently");

  auto* gradcheck =
      app.add_subcommand("grad-check", "finite-difference verification of the loss zoo");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  if (gen->parsed()) {
    const json doc = load_config(gen_flags);
    mdkt_dataset* dataset = nullptr;
    mdkt_status status = mdkt_dataset_generate(doc.dump().c_str(), &dataset);
    if (status != MDKT_OK) return fail(status);
    const std::string path = run_dir_of(doc) + "/dataset.bin";
    status = mdkt_dataset_save(dataset, path.c_str());
    if (status != MDKT_OK) {
      mdkt_dataset_free(dataset);
      return fail(status);
    }
    char* summary = nullptr;
    status = mdkt_dataset_summary(dataset, &summary);
    mdkt_dataset_free(dataset);
    if (status != MDKT_OK) return fail(status);
    json out = json::parse(summary);
    mdkt_string_free(summary);
    out["path"] = path;
    std::cout << out.dump(2) << "\n";
    return 0;
  }

  if (teacher->parsed()) {
    const json doc = load_config(teacher_flags);
    char* report = nullptr;
    return print_report(mdkt_train_teacher(doc.dump().c_str(), &report), report);
  }

  if (dist->parsed()) {
    json doc = load_config(distill_flags);
    if (freeze_teacher) doc["distill_train"]["freeze_teacher"] = true;
    char* report = nullptr;
    return print_report(mdkt_distill(doc.dump().c_str(), &report), report);
  }

  if (eval->parsed()) {
    const json doc = load_config(eval_flags);
    char* report = nullptr;
    return print_report(
        mdkt_evaluate(doc.dump().c_str(), eval_checkpoint.c_str(), eval_network.c_str(), &report),
        report);
  }

  if (ablate->parsed()) {
    const json doc = load_config(ablate_flags);
    char* table = nullptr;
    return print_report(
        mdkt_ablate(doc.dump().c_str(), ablate_suite.c_str(), ablate_seeds, jobs, &table), table);
  }

  if (gradcheck->parsed()) {
    char* report = nullptr;
    return print_report(mdkt_grad_check(&report), report);
  }

  return kExitConfig;
}
