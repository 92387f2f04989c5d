#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "olab/checkpoint.hpp"
#include "olab/data.hpp"
#include "olab/engine.hpp"
#include "olab/models.hpp"

namespace olab::train {

enum class ModelKind { TextEncoder, TextDecoder, Vision, Multimodal };

std::string kind_name(ModelKind kind);
ModelKind kind_from_name(const std::string& name);  // throws ConfigError

// Deterministic board -> feature-vector map used by the multimodal model
// (conv encoder output or pooled-pixel baselines).
struct BoardFeaturizer {
  int dim = 0;
  std::string id;
  // boards -> row-major (n, dim)
  std::function<std::vector<double>(const std::vector<engine::Board>&)> batch;

  std::vector<double> one(const engine::Board& b) const { return batch({b}); }
};

BoardFeaturizer pooling_featurizer(int render_side = 600);
BoardFeaturizer area_featurizer(int render_side = 600);

// One model of any of the four kinds, plus the shared load/save plumbing.
struct AnyModel {
  ModelKind kind = ModelKind::TextEncoder;
  std::shared_ptr<models::TextEncoder> text_encoder;
  std::shared_ptr<models::CausalDecoder> decoder;
  std::shared_ptr<models::ResidualConvEncoder> vision;
  std::shared_ptr<models::MultimodalEncoder> multimodal;

  static AnyModel create(ModelKind kind, const models::ModelConfig& cfg);

  const models::ModelConfig& config() const;
  models::ParamMap named_parameters() const;

  void save(const std::string& path, const models::TrainMeta& meta) const;
  static AnyModel load(const std::string& path);  // kind from checkpoint
};

// Conv-encoder-backed featurizer (eval mode, renders at cfg.image_side).
BoardFeaturizer conv_featurizer(std::shared_ptr<models::ResidualConvEncoder> encoder);

// Per-game feature cache so training does not re-render every epoch.
class FeatureCache {
 public:
  FeatureCache(BoardFeaturizer featurizer, const data::Corpus* corpus)
      : featurizer_(std::move(featurizer)), corpus_(corpus) {}

  // features for boards b_1..b_s of the game, row-major (s, dim)
  const std::vector<double>& game_features(int game_id);
  const BoardFeaturizer& featurizer() const { return featurizer_; }

 private:
  BoardFeaturizer featurizer_;
  const data::Corpus* corpus_;
  std::unordered_map<int, std::vector<double>> cache_;
};

struct TrainResult {
  models::TrainMeta meta;           // best epoch / metric / seed
  data::MetricHistory history;
  bool converged = false;           // stopped via patience rather than max_epochs
};

// Full loop: objective mix, validation by legal-move accuracy, early
// stopping, best-weights restore. `features` is required for the multimodal
// kind and ignored otherwise. Throws NumericalError on divergence.
TrainResult train_model(AnyModel& model, const data::Corpus& corpus,
                        const data::TrainSchedule& sched, uint64_t seed,
                        FeatureCache* features = nullptr);

}  // namespace olab::train
