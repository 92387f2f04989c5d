#pragma once

#include <array>
#include <string>
#include <vector>

#include "olab/data.hpp"
#include "olab/tensor.hpp"
#include "olab/train.hpp"

namespace olab::probe {

// Tile states relative to the side to move after the sampled step.
enum TileState : uint8_t { kEmpty = 0, kMine = 1, kTheirs = 2 };

struct ProbeDataset {
  int dim = 0;
  std::vector<double> activations;              // n * dim
  std::vector<std::array<uint8_t, 64>> labels;  // board after the read move
  std::vector<std::pair<int, int>> provenance;  // (game_id, 1-based step t)

  int n() const { return static_cast<int>(labels.size()); }
};

// Runs fully-visible prefixes and reads the activation of the last move
// token at `layer` (0 = embeddings). Labels come from b_{t+1}. Samples
// `samples_per_game` seeded steps per game.
ProbeDataset extract_probe_dataset(const train::AnyModel& model, const data::Corpus& corpus,
                                   const std::vector<int>& game_ids, int layer,
                                   int samples_per_game, uint64_t seed,
                                   train::FeatureCache* features = nullptr);

struct ProbeOptions {
  int max_epochs = 300;
  int batch_size = 256;
  double learning_rate = 1e-2;
  int patience = 10;  // epochs without validation-loss improvement
  uint64_t seed = 0;
};

// 64 independent 3-way linear classifiers packed into one (d, 192) matrix;
// tile t owns columns [3t, 3t+3).
struct LinearProbe {
  int dim = 0;
  nn::Tensor w;  // (d, 192)
  nn::Tensor b;  // (1, 192)

  // per-row predicted tile states, n x 64
  std::vector<std::array<uint8_t, 64>> predict(const ProbeDataset& data) const;
};

LinearProbe train_probe(const ProbeDataset& train, const ProbeDataset& validation,
                        const ProbeOptions& opts = {});

struct ProbeReport {
  std::string model_id;
  int layer = 0;
  double macro_f1 = 0.0;               // mean of per-tile scores
  std::array<double, 64> per_tile_f1{};
  int tiles_with_missing_classes = 0;  // scored over present classes only

  std::string to_json() const;
};

// Macro F1 of the probe on a held-out dataset.
ProbeReport score_probe(const LinearProbe& probe, const ProbeDataset& test);

// Trains and scores one probe per layer (0 .. n_layers).
std::vector<ProbeReport> probe_sweep(const train::AnyModel& model, const data::Corpus& corpus,
                                     int samples_per_game, uint64_t seed,
                                     train::FeatureCache* features = nullptr,
                                     const ProbeOptions& opts = {});

void write_sweep_csv(const std::string& path, const std::vector<ProbeReport>& sweep);

}  // namespace olab::probe
