#pragma once

#include <string>

#include "olab/models.hpp"

namespace olab::models {

struct TrainMeta {
  int epoch = 0;
  double best_metric = 0.0;
  uint64_t seed = 0;
};

struct CheckpointData {
  std::string kind;  // text_encoder | text_decoder | vision | multimodal
  ModelConfig config;
  TrainMeta meta;
  ParamMap tensors;
};

// Versioned binary container: header (magic, version, kind, config as
// canonical text, training metadata) followed by named little-endian f64
// tensor blobs. Save/load round-trips bit-exactly.
void save_checkpoint(const std::string& path, const std::string& kind, const ModelConfig& config,
                     const TrainMeta& meta, const ParamMap& params);

CheckpointData load_checkpoint(const std::string& path);

// Throws ConfigMismatchError when the stored kind/config differ.
void ensure_matches(const CheckpointData& data, const std::string& kind,
                    const ModelConfig& config);

// Copies stored values into the model's parameters; names and shapes must
// line up exactly.
void load_state(const ParamMap& model_params, const CheckpointData& data);

}  // namespace olab::models
