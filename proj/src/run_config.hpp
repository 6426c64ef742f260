#pragma once

#include <optional>
#include <string>

#include "dataset.hpp"
#include "eval.hpp"
#include "model.hpp"
#include "trainer.hpp"

#include "json.hpp"

namespace mdkt {

struct EvalSettings {
  EvalDistance distance = EvalDistance::kEuclidean;
  bool exclude_same_camera = true;
};

// One JSON document per run: the full provenance record. Every emitted
// artifact embeds digest() so outputs can be traced back to their exact
// configuration.
struct RunConfig {
  std::string run_name = "run";
  std::string output_dir;
  DatasetConfig dataset;
  std::optional<std::string> dataset_path;  // load instead of regenerating
  ModelConfig model;
  BatchSpec batch;
  TrainConfig teacher_train;
  TrainConfig distill_train;
  EvalSettings eval;
  std::optional<std::string> teacher_checkpoint;

  // Parses strictly: unknown fields and ill-typed values raise ConfigError
  // naming the offending field. Missing fields take defaults; model dims and
  // class count are derived from the dataset when not given.
  static RunConfig from_json_text(const std::string& text);
  static RunConfig from_json(const nlohmann::json& doc);

  nlohmann::json to_json() const;
  std::string digest() const;  // FNV-1a 64 over the canonical serialization

  std::string run_dir() const;
  void validate() const;

  // Loads dataset_path when set, otherwise generates from the dataset config.
  Dataset materialize_dataset() const;
};

std::string fnv1a_hex(const std::string& bytes);

}  // namespace mdkt
