#include <set>
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <random>

#include "olab/data.hpp"
#include "olab/engine.hpp"
#include "olab/errors.hpp"
#include "olab/models.hpp"

using namespace olab;
using namespace olab::data;

namespace {

Corpus tiny_corpus(int n = 40, uint64_t seed = 100) {
  std::vector<engine::GameRecord> games;
  for (int i = 0; i < n; ++i) games.push_back(engine::generate_random_game(seed + i));
  return build_corpus(std::move(games), 9);
}

}  // namespace

TEST_CASE("corpus split proportions and determinism") {
  const Corpus a = tiny_corpus(100);
  const Corpus b = tiny_corpus(100);
  CHECK(a.train_ids == b.train_ids);
  CHECK(a.validation_ids == b.validation_ids);
  CHECK(a.test_ids == b.test_ids);
  CHECK(a.train_ids.size() == 80);
  CHECK(a.validation_ids.size() == 5);
  CHECK(a.test_ids.size() == 15);
  // disjoint and covering
  std::set<int> all(a.train_ids.begin(), a.train_ids.end());
  all.insert(a.validation_ids.begin(), a.validation_ids.end());
  all.insert(a.test_ids.begin(), a.test_ids.end());
  CHECK(all.size() == 100);
}

TEST_CASE("scale cap shrinks only the training split") {
  std::vector<engine::GameRecord> games;
  for (int i = 0; i < 100; ++i) games.push_back(engine::generate_random_game(i));
  const Corpus capped = build_corpus(games, 9, 10);
  const Corpus full = build_corpus(games, 9, 0);
  CHECK(capped.train_ids.size() == 10);
  CHECK(capped.validation_ids == full.validation_ids);
  CHECK(capped.test_ids == full.test_ids);
  for (int id : capped.train_ids)
    CHECK(std::find(full.train_ids.begin(), full.train_ids.end(), id) != full.train_ids.end());
}

TEST_CASE("random masking hits 15 percent rounded, at least one") {
  const Corpus corpus = tiny_corpus();
  std::mt19937_64 rng(1);
  const int id = corpus.train_ids[0];
  const auto& game = corpus.games[id];
  for (int s : {1, 3, 10, 20, static_cast<int>(game.moves.size())}) {
    const MaskedExample ex = make_random_mask_example(game, id, s, rng);
    const int expected = std::max(1, static_cast<int>(std::floor(0.15 * s + 0.5)));
    CHECK(static_cast<int>(ex.target_positions.size()) == expected);
    int masked = 0;
    for (int i = 0; i < s; ++i) {
      if (ex.input_tokens[i] == models::Vocab::kMask) {
        ++masked;
        CHECK(ex.text_visible[i] == 0);
      } else {
        CHECK(ex.input_tokens[i] == game.moves[i].index);
        CHECK(ex.text_visible[i] == 1);
      }
      CHECK(ex.image_visible[i] == 1);  // images stay fully visible
    }
    CHECK(masked == expected);
    for (size_t k = 0; k < ex.target_positions.size(); ++k)
      CHECK(ex.target_ids[k] == game.moves[ex.target_positions[k]].index);
  }
}

TEST_CASE("future masking masks text from t and images after t") {
  const Corpus corpus = tiny_corpus();
  const int id = corpus.train_ids[0];
  const auto& game = corpus.games[id];
  const int s = 12, t = 5;
  const MaskedExample ex = make_future_mask_example(game, id, s, t);
  for (int i = 0; i < s; ++i) {
    CHECK(ex.text_visible[i] == (i < t - 1 ? 1 : 0));
    CHECK(ex.image_visible[i] == (i < t ? 1 : 0));
    CHECK((ex.input_tokens[i] == models::Vocab::kMask) == (i >= t - 1));
  }
  REQUIRE(ex.target_positions.size() == 1);
  CHECK(ex.target_positions[0] == t - 1);
  CHECK(ex.target_ids[0] == game.moves[t - 1].index);
  // all-masked variant targets every masked step
  const MaskedExample all = make_future_mask_example(game, id, s, t, true);
  CHECK(static_cast<int>(all.target_positions.size()) == s - t + 1);
  CHECK_THROWS_AS(make_future_mask_example(game, id, s, 0), olab::DataError);
  CHECK_THROWS_AS(make_future_mask_example(game, id, s, s + 1), olab::DataError);
}

TEST_CASE("text-image pairing replaces text at the configured rate") {
  const Corpus corpus = tiny_corpus();
  std::mt19937_64 rng(2);
  const int id = corpus.train_ids[0];
  const auto& game = corpus.games[id];
  int replaced = 0;
  const int trials = 400;
  for (int trial = 0; trial < trials; ++trial) {
    MaskedExample ex = make_random_mask_example(game, id, 10, rng);
    make_text_image_pair(ex, corpus, rng, 0.5);
    REQUIRE(ex.match_label.has_value());
    if (!*ex.match_label) {
      ++replaced;
      bool differs = false;
      for (int i = 0; i < 10; ++i) {
        if (ex.input_tokens[i] == models::Vocab::kMask) continue;
        if (ex.input_tokens[i] != game.moves[i].index) differs = true;
      }
      CHECK(differs);
    } else {
      for (int i = 0; i < 10; ++i)
        if (ex.input_tokens[i] != models::Vocab::kMask)
          CHECK(ex.input_tokens[i] == game.moves[i].index);
    }
  }
  CHECK(replaced > trials * 0.4);
  CHECK(replaced < trials * 0.6);
}

TEST_CASE("metrics csv round-trips") {
  const MetricHistory history = {{1, "train", "loss", 3.5, 0.1},
                                 {10, "validation", "legal_move_accuracy", 42.25, 1.5}};
  const std::string path = "test_metrics.csv";
  write_metrics_csv(path, history);
  const MetricHistory back = read_metrics_csv(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].epoch == 1);
  CHECK(back[0].split == "train");
  CHECK(back[0].value == 3.5);
  CHECK(back[1].metric == "legal_move_accuracy");
  CHECK(back[1].value == 42.25);
  std::remove(path.c_str());
}
