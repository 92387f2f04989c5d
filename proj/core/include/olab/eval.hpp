#pragma once

#include <string>
#include <vector>

#include "olab/data.hpp"
#include "olab/train.hpp"

namespace olab::eval {

struct StepAccuracy {
  int step = 0;  // 1-based move index t
  int total = 0;
  int legal = 0;
};

struct EvalReport {
  std::string model_id;
  std::string dataset_id;
  std::string condition;  // "original" or "rotated"
  int n_positions = 0;
  int n_legal = 0;
  double accuracy = 0.0;  // percent
  std::vector<StepAccuracy> by_step;

  std::string to_json() const;
};

// Predicts m_t from the prefix before it at every step of every game and
// scores argmax legality against legal_move_mask(b_t). `rotated` replays the
// 180-degree-rotated games instead.
EvalReport legal_move_accuracy(const train::AnyModel& model, const data::Corpus& corpus,
                               const std::vector<int>& game_ids, bool rotated,
                               train::FeatureCache* features, int batch_size = 64,
                               const std::string& dataset_id = "");

engine::GameRecord rotate_record(const engine::GameRecord& record);

// Expected legality rate of a uniform predictor over the 64 tiles, percent.
double random_predictor_floor(const data::Corpus& corpus, const std::vector<int>& game_ids);

}  // namespace olab::eval
