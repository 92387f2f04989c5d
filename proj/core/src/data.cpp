#include "olab/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "olab/errors.hpp"
#include "olab/models.hpp"

namespace olab::data {

Corpus build_corpus(std::vector<engine::GameRecord> games, uint64_t seed, int scale_cap) {
  if (games.empty()) throw DataError("build_corpus: empty game list");
  Corpus corpus;
  corpus.games = std::move(games);
  const int n = static_cast<int>(corpus.games.size());

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  const int n_train = static_cast<int>(std::llround(n * 0.80));
  const int n_val = static_cast<int>(std::llround(n * 0.05));
  corpus.split.assign(n, Split::Test);
  for (int i = 0; i < n; ++i) {
    Split s = i < n_train               ? Split::Train
              : i < n_train + n_val     ? Split::Validation
                                        : Split::Test;
    corpus.split[order[i]] = s;
    if (s == Split::Train) corpus.train_ids.push_back(order[i]);
    else if (s == Split::Validation) corpus.validation_ids.push_back(order[i]);
    else corpus.test_ids.push_back(order[i]);
  }
  if (scale_cap > 0 && scale_cap < static_cast<int>(corpus.train_ids.size())) {
    std::shuffle(corpus.train_ids.begin(), corpus.train_ids.end(), rng);
    corpus.train_ids.resize(scale_cap);
    std::sort(corpus.train_ids.begin(), corpus.train_ids.end());
  }
  return corpus;
}

MaskedExample make_random_mask_example(const engine::GameRecord& game, int game_id,
                                       int prefix_len, std::mt19937_64& rng) {
  const int s = prefix_len;
  if (s < 1 || s > static_cast<int>(game.moves.size()))
    throw DataError("make_random_mask_example: prefix length out of range");
  MaskedExample ex;
  ex.objective = Objective::RandomMask;
  ex.game_id = game_id;
  ex.prefix_len = s;
  ex.input_tokens.resize(s);
  ex.text_visible.assign(s, 1);
  ex.image_visible.assign(s, 1);
  for (int i = 0; i < s; ++i) ex.input_tokens[i] = game.moves[i].index;

  const int n_mask = std::max(1, static_cast<int>(std::floor(0.15 * s + 0.5)));
  std::vector<int> positions(s);
  std::iota(positions.begin(), positions.end(), 0);
  std::shuffle(positions.begin(), positions.end(), rng);
  positions.resize(n_mask);
  std::sort(positions.begin(), positions.end());
  for (int p : positions) {
    ex.target_positions.push_back(p);
    ex.target_ids.push_back(game.moves[p].index);
    ex.input_tokens[p] = models::Vocab::kMask;
    ex.text_visible[p] = 0;
  }
  return ex;
}

MaskedExample make_future_mask_example(const engine::GameRecord& game, int game_id,
                                       int prefix_len, int t, bool loss_all_masked) {
  const int s = prefix_len;
  if (s < 1 || s > static_cast<int>(game.moves.size()))
    throw DataError("make_future_mask_example: prefix length out of range");
  if (t < 1 || t > s) throw DataError("make_future_mask_example: t out of range");
  MaskedExample ex;
  ex.objective = Objective::FutureMask;
  ex.game_id = game_id;
  ex.prefix_len = s;
  ex.future_t = t;
  ex.input_tokens.resize(s);
  ex.text_visible.assign(s, 1);
  ex.image_visible.assign(s, 1);
  for (int i = 0; i < s; ++i) ex.input_tokens[i] = game.moves[i].index;
  for (int i = t - 1; i < s; ++i) {
    ex.input_tokens[i] = models::Vocab::kMask;
    ex.text_visible[i] = 0;
  }
  for (int i = t; i < s; ++i) ex.image_visible[i] = 0;
  if (loss_all_masked) {
    for (int i = t - 1; i < s; ++i) {
      ex.target_positions.push_back(i);
      ex.target_ids.push_back(game.moves[i].index);
    }
  } else {
    ex.target_positions.push_back(t - 1);
    ex.target_ids.push_back(game.moves[t - 1].index);
  }
  return ex;
}

void make_text_image_pair(MaskedExample& example, const Corpus& corpus, std::mt19937_64& rng,
                          double p_replace) {
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  if (coin(rng) >= p_replace) {
    example.match_label = true;
    return;
  }
  // Candidate donors: different training games at least as long as the prefix.
  std::vector<int> candidates;
  candidates.reserve(corpus.train_ids.size());
  for (int id : corpus.train_ids) {
    if (id == example.game_id) continue;
    if (static_cast<int>(corpus.games[id].moves.size()) >= example.prefix_len)
      candidates.push_back(id);
  }
  if (candidates.empty()) {
    example.match_label = true;  // degenerate corpus; keep the pair matched
    return;
  }
  std::uniform_int_distribution<size_t> pick(0, candidates.size() - 1);
  const engine::GameRecord& donor = corpus.games[candidates[pick(rng)]];
  for (int i = 0; i < example.prefix_len; ++i) {
    if (example.input_tokens[i] != models::Vocab::kMask)
      example.input_tokens[i] = donor.moves[i].index;
  }
  for (size_t k = 0; k < example.target_positions.size(); ++k)
    example.target_ids[k] = donor.moves[example.target_positions[k]].index;
  example.match_label = false;
}

void write_metrics_csv(const std::string& path, const MetricHistory& history) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw DataError("write_metrics_csv: cannot open " + path);
  std::fprintf(f, "epoch,split,metric,value,wall_clock_s\n");
  for (const auto& row : history)
    std::fprintf(f, "%d,%s,%s,%.10g,%.3f\n", row.epoch, row.split.c_str(), row.metric.c_str(),
                 row.value, row.wall_clock_s);
  std::fclose(f);
}

MetricHistory read_metrics_csv(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "r");
  if (!f) throw DataError("read_metrics_csv: cannot open " + path);
  MetricHistory history;
  char line[512];
  bool header = true;
  while (std::fgets(line, sizeof line, f)) {
    if (header) { header = false; continue; }
    std::istringstream ss(line);
    MetricRow row;
    std::string field;
    if (!std::getline(ss, field, ',')) continue;
    row.epoch = std::stoi(field);
    std::getline(ss, row.split, ',');
    std::getline(ss, row.metric, ',');
    std::getline(ss, field, ',');
    row.value = std::stod(field);
    std::getline(ss, field, ',');
    row.wall_clock_s = std::stod(field);
    history.push_back(std::move(row));
  }
  std::fclose(f);
  return history;
}

}  // namespace olab::data
