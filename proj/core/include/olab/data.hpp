#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "olab/engine.hpp"

namespace olab::data {

enum class Split { Train, Validation, Test };

struct Corpus {
  std::vector<engine::GameRecord> games;  // indexed by game id
  std::vector<Split> split;               // per game id
  std::vector<int> train_ids;             // after scale cap
  std::vector<int> validation_ids;
  std::vector<int> test_ids;

  const engine::GameRecord& game(int id) const { return games[id]; }
};

// Seeded shuffle, 80/5/15 split; scale_cap (when > 0) keeps a seeded random
// subset of the training split and leaves validation/test untouched.
Corpus build_corpus(std::vector<engine::GameRecord> games, uint64_t seed, int scale_cap = 0);

enum class Objective { RandomMask, FutureMask };

struct MaskedExample {
  Objective objective = Objective::RandomMask;
  int game_id = -1;
  int prefix_len = 0;                 // s
  int future_t = 0;                   // 1-based target step for FutureMask
  std::vector<int> input_tokens;      // s ids, MASK substituted
  std::vector<uint8_t> text_visible;  // s flags
  std::vector<uint8_t> image_visible; // s flags
  std::vector<int> target_positions;  // 0-based step indices, subset of masked
  std::vector<int> target_ids;        // true move ids at target positions
  std::optional<bool> match_label;    // text-image prediction label
};

// Masks max(1, round-half-up(0.15 s)) text positions uniformly; images stay
// fully visible.
MaskedExample make_random_mask_example(const engine::GameRecord& game, int game_id,
                                       int prefix_len, std::mt19937_64& rng);

// Masks text t..s and images t+1..s; the board before m_t stays visible.
// Loss lands on m_t only unless loss_all_masked is set.
MaskedExample make_future_mask_example(const engine::GameRecord& game, int game_id,
                                       int prefix_len, int t, bool loss_all_masked = false);

// With probability p_replace swaps the move sequence for an equal-length
// prefix of a different training game (match_label = false); image tokens
// always stay with the source game.
void make_text_image_pair(MaskedExample& example, const Corpus& corpus, std::mt19937_64& rng,
                          double p_replace = 0.5);

struct TrainSchedule {
  int max_epochs = 1000;
  int validate_every = 10;
  int patience = 5;             // validations without improvement
  int batch_size = 128;         // sequence / multimodal models
  int conv_batch_size = 512;    // vision model
  double learning_rate = 1e-4;
  int scale_cap = 0;            // training games, 0 = all
  double p_future_mask = 0.2;   // objective mix; random mask gets the rest
  double p_replace = 0.5;       // text-image prediction replacement chance
  bool future_loss_all_masked = false;
  int max_steps_per_epoch = 0;  // 0 = one pass over the training split
};

struct MetricRow {
  int epoch = 0;
  std::string split;
  std::string metric;
  double value = 0.0;
  double wall_clock_s = 0.0;
};

using MetricHistory = std::vector<MetricRow>;

void write_metrics_csv(const std::string& path, const MetricHistory& history);
MetricHistory read_metrics_csv(const std::string& path);

}  // namespace olab::data
