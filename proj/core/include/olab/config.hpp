#pragma once

#include <string>

#include "olab/data.hpp"
#include "olab/models.hpp"

namespace olab::config {

// INI-style experiment description; every field has a default, unknown
// sections or keys are errors, and the resolved form round-trips through
// serialize()/parse().
struct ExperimentConfig {
  // [global]
  uint64_t seed = 7;
  std::string output_dir = "run";

  // [corpus]
  std::string corpus_source;   // transcript file; empty = generate
  uint64_t corpus_seed = 11;
  int corpus_games = 1000;     // generated games when source is empty
  int scale = 0;               // training-split cap, 0 = all

  // [model]
  std::string model_kind = "multimodal";
  models::ModelConfig model;

  // [schedule]
  data::TrainSchedule schedule;

  // [features] (multimodal visual stream)
  std::string featurizer = "conv";  // conv | pooling | area
  std::string encoder_checkpoint;   // conv featurizer weights; empty = fresh

  // [evaluation]
  std::string eval_split = "test";
  bool rotate = false;

  // [probing]
  int probe_samples_per_game = 4;
  int probe_epochs = 300;

  // [alignment]
  std::string align_source;  // feature-set or checkpoint paths
  std::string align_target;
  std::string align_mode = "supervised";
  int align_features = 3000;

  std::string serialize() const;
  void validate() const;  // throws ConfigError
};

ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

}  // namespace olab::config
