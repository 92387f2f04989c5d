// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Run a subset with e.g. `acceptance 1 2 3`.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "olab/align.hpp"
#include "olab/config.hpp"
#include "olab/data.hpp"
#include "olab/engine.hpp"
#include "olab/eval.hpp"
#include "olab/imaging.hpp"
#include "olab/manifest.hpp"
#include "olab/models.hpp"
#include "olab/ops.hpp"
#include "olab/probe.hpp"
#include "olab/train.hpp"

using namespace olab;

namespace {

// ------------------------------------------------------------------ helpers

int g_failures = 0;

void report(int criterion, bool pass, const std::string& detail) {
  std::printf("CRITERION %d: %s — %s\n", criterion, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

double minutes_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
}

// desk-scale model shared by the training criteria
models::ModelConfig desk_model(uint64_t seed) {
  models::ModelConfig cfg;
  cfg.d_model = 64;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.d_ff = 256;
  cfg.max_seq_len = 128;
  cfg.d_v = 64;
  cfg.conv_channels = 16;
  cfg.conv_stages = 3;
  cfg.image_side = 40;
  cfg.dropout = 0.1;
  cfg.seed = seed;
  return cfg;
}

data::Corpus make_corpus(int n_games, uint64_t seed) {
  std::vector<engine::GameRecord> games;
  games.reserve(n_games);
  for (int i = 0; i < n_games; ++i) games.push_back(engine::generate_random_game(seed + i));
  return data::build_corpus(std::move(games), seed ^ 0xabcdef);
}

// trained models reused across criteria 5-9
struct TrainedStack {
  data::Corpus corpus1k, corpus2k;
  train::AnyModel vision1k;     // pretrained conv encoder + vision baseline
  train::AnyModel multimodal1k;
  train::AnyModel multimodal2k;
  train::AnyModel text2k;
  train::AnyModel multimodal1k_noftm;
  double vision_minutes = 0, mm1k_minutes = 0, mm2k_minutes = 0, text_minutes = 0;
  bool ready = false;
};

TrainedStack g_stack;

data::TrainSchedule desk_schedule() {
  data::TrainSchedule s;
  s.batch_size = 64;
  s.conv_batch_size = 128;
  s.learning_rate = 1e-3;
  s.validate_every = 10;
  s.patience = 6;
  s.p_future_mask = 0.3;
  s.p_replace = 0.2;
  return s;
}

void build_stack() {
  if (g_stack.ready) return;
  g_stack.corpus1k = make_corpus(1000, 10000);
  g_stack.corpus2k = make_corpus(2000, 10000);

  auto timed = [](auto&& fn, double& minutes) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    minutes = minutes_since(t0);
  };

  // vision baseline at 1k (also the multimodal featurizer)
  timed(
      [&] {
        g_stack.vision1k = train::AnyModel::create(train::ModelKind::Vision, desk_model(1));
        data::TrainSchedule s = desk_schedule();
        s.max_epochs = 7;
        s.validate_every = 2;
        s.max_steps_per_epoch = 100;
        train::train_model(g_stack.vision1k, g_stack.corpus1k, s, 101);
      },
      g_stack.vision_minutes);

  auto train_multimodal = [&](const data::Corpus& corpus, double p_ftm, uint64_t seed,
                              int max_epochs, int steps_per_epoch) {
    train::AnyModel model = train::AnyModel::create(train::ModelKind::Multimodal, desk_model(seed));
    train::FeatureCache cache(train::conv_featurizer(g_stack.vision1k.vision), &corpus);
    data::TrainSchedule s = desk_schedule();
    s.max_epochs = max_epochs;
    s.p_future_mask = p_ftm;
    s.max_steps_per_epoch = steps_per_epoch;
    train::train_model(model, corpus, s, seed, &cache);
    return model;
  };

  timed([&] { g_stack.multimodal1k = train_multimodal(g_stack.corpus1k, 0.3, 201, 130, 0); },
        g_stack.mm1k_minutes);
  timed([&] { g_stack.multimodal2k = train_multimodal(g_stack.corpus2k, 0.3, 202, 130, 13); },
        g_stack.mm2k_minutes);
  g_stack.multimodal1k_noftm = train_multimodal(g_stack.corpus1k, 0.0, 201, 130, 0);

  timed(
      [&] {
        g_stack.text2k = train::AnyModel::create(train::ModelKind::TextEncoder, desk_model(3));
        data::TrainSchedule s = desk_schedule();
        s.max_epochs = 200;
        train::train_model(g_stack.text2k, g_stack.corpus2k, s, 301);
      },
      g_stack.text_minutes);
  g_stack.ready = true;
}

double test_accuracy(const train::AnyModel& model, const data::Corpus& corpus, bool rotated) {
  std::unique_ptr<train::FeatureCache> cache;
  if (model.kind == train::ModelKind::Multimodal)
    cache = std::make_unique<train::FeatureCache>(
        train::conv_featurizer(g_stack.vision1k.vision), &corpus);
  return eval::legal_move_accuracy(model, corpus, corpus.test_ids, rotated, cache.get())
      .accuracy;
}

// --------------------------------------------------- criterion 1: engine

std::vector<int> oracle_flips(const engine::Board& b, int move) {
  using engine::Cell;
  const Cell own = b.side_to_move == engine::Player::Black ? Cell::Black : Cell::White;
  const Cell opp = b.side_to_move == engine::Player::Black ? Cell::White : Cell::Black;
  std::vector<int> flips;
  if (b.cells[move] != Cell::Empty) return flips;
  const int r0 = move / 8, c0 = move % 8;
  for (int dr = -1; dr <= 1; ++dr)
    for (int dc = -1; dc <= 1; ++dc) {
      if (dr == 0 && dc == 0) continue;
      std::vector<int> line;
      int r = r0 + dr, c = c0 + dc;
      while (r >= 0 && r < 8 && c >= 0 && c < 8 && b.cells[r * 8 + c] == opp) {
        line.push_back(r * 8 + c);
        r += dr;
        c += dc;
      }
      if (!line.empty() && r >= 0 && r < 8 && c >= 0 && c < 8 && b.cells[r * 8 + c] == own)
        flips.insert(flips.end(), line.begin(), line.end());
    }
  return flips;
}

std::set<int> oracle_legal(const engine::Board& b) {
  std::set<int> out;
  for (int i = 0; i < 64; ++i)
    if (!oracle_flips(b, i).empty()) out.insert(i);
  return out;
}

uint64_t oracle_perft(const engine::Board& b, int depth) {
  if (depth == 0) return 1;
  uint64_t total = 0;
  for (int m : oracle_legal(b)) total += oracle_perft(engine::apply_move(b, engine::Square(m)), depth - 1);
  return total;
}

void criterion_1() {
  const auto t0 = std::chrono::steady_clock::now();
  bool pass = engine::perft(1) == 4 && engine::perft(2) == 12 && engine::perft(3) == 56;
  for (int d = 1; d <= 3 && pass; ++d)
    pass = engine::perft(d) == oracle_perft(engine::Board::initial(), d);

  // 10,000 random positions, move-for-move agreement
  std::mt19937_64 rng(424242);
  int checked = 0;
  while (checked < 10000 && pass) {
    engine::Board b = engine::Board::initial();
    std::uniform_int_distribution<int> depth_pick(0, 55);
    const int depth = depth_pick(rng);
    for (int ply = 0; ply <= depth; ++ply) {
      std::set<int> engine_moves;
      const uint64_t mask = engine::legal_move_mask(b);
      for (int i = 0; i < 64; ++i)
        if ((mask >> i) & 1) engine_moves.insert(i);
      if (engine_moves != oracle_legal(b)) {
        pass = false;
        break;
      }
      ++checked;
      if (engine_moves.empty() || checked >= 10000) break;
      std::vector<int> moves(engine_moves.begin(), engine_moves.end());
      std::uniform_int_distribution<size_t> pick(0, moves.size() - 1);
      b = engine::apply_move(b, engine::Square(moves[pick(rng)]));
    }
  }
  const double mins = minutes_since(t0);
  std::ostringstream os;
  os << "perft(1..3) = 4/12/56 vs oracle, " << checked << " positions move-for-move, "
     << mins << " min";
  report(1, pass && mins < 1.0, os.str());
}

// --------------------------------------------- criterion 2: rotation

void criterion_2() {
  int violations = 0;
  for (int g = 0; g < 1000; ++g) {
    engine::Board b = engine::Board::initial();
    const engine::GameRecord game = engine::generate_random_game(777000 + g);
    for (engine::Square m : game.moves) {
      const engine::Board rb = engine::rotate_board(b);
      // legality commutes
      const uint64_t mask = engine::legal_move_mask(b);
      const uint64_t rmask = engine::legal_move_mask(rb);
      for (int i = 0; i < 64; ++i)
        if (((mask >> i) & 1) != ((rmask >> (63 - i)) & 1)) ++violations;
      // apply commutes
      const engine::Board next = engine::apply_move(b, m);
      if (!(engine::rotate_board(next) == engine::apply_move(rb, engine::rotate_square(m))))
        ++violations;
      b = next;
    }
  }
  std::ostringstream os;
  os << "legality and apply_move commute with 180-degree rotation over 1000 games, "
     << violations << " violations";
  report(2, violations == 0, os.str());
}

// --------------------------------------------- criterion 3: gradients

void criterion_3() {
  using namespace olab::nn;
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(31);
  auto randn = [&](Shape s) { return Tensor::truncated_normal(std::move(s), 1.0, rng, true); };
  double worst = 0.0;
  auto track = [&](double err) { worst = std::max(worst, err); };

  Tensor a = randn({3, 4}), b = randn({3, 4}), row = randn({1, 4});
  track(grad_check([&](const auto& p) { return sum(add(p[0], p[1])); }, {a, b}));
  track(grad_check([&](const auto& p) { return sum(sub(p[0], p[1])); }, {a, b}));
  track(grad_check([&](const auto& p) { return sum(mul(p[0], p[1])); }, {a, row}));
  track(grad_check([&](const auto& p) { return sum(scale(p[0], 2.5)); }, {a}));
  Tensor m1 = randn({3, 5}), m2 = randn({5, 2});
  track(grad_check([&](const auto& p) { return sum(matmul(p[0], p[1])); }, {m1, m2}));
  Tensor b1 = randn({2, 3, 5}), b2 = randn({2, 5, 4});
  track(grad_check([&](const auto& p) { return sum(bmm(p[0], p[1])); }, {b1, b2}));
  Tensor c = randn({2, 3, 4});
  track(grad_check([&](const auto& p) { return sum(permute(p[0], {1, 2, 0})); }, {c}));
  track(grad_check([&](const auto& p) { return sum(transpose_last2(p[0])); }, {c}));
  track(grad_check([&](const auto& p) { return sum(reshape(p[0], {-1, 4})); }, {c}));
  track(grad_check([&](const auto& p) { return sum(slice_axis(p[0], 1, 0, 2)); }, {c}));
  Tensor s1 = randn({4, 3});
  track(grad_check([&](const auto& p) { return sum(slice_rows(p[0], 1, 3)); }, {s1}));
  track(grad_check([&](const auto& p) { return sum(concat({p[0], p[0]}, 1)); }, {s1}));
  Tensor sp = randn({2, 4, 3});
  track(grad_check([&](const auto& p) { return sum(select_positions(p[0], {2, 0})); }, {sp}));
  Tensor table = randn({7, 3});
  track(grad_check([&](const auto& p) { return sum(embedding(p[0], {0, 6, 3}, {3})); }, {table}));
  Tensor nl = randn({3, 6});
  track(grad_check([&](const auto& p) { return sum(mul(softmax(p[0]), p[0])); }, {nl}));
  track(grad_check([&](const auto& p) { return sum(gelu(p[0])); }, {nl}));
  track(grad_check([&](const auto& p) { return sum(sigmoid(p[0])); }, {nl}));
  track(grad_check([&](const auto& p) { return sum(mul(relu(p[0]), p[0])); }, {nl}, 1e-6));
  track(grad_check([&](const auto& p) { return mean(mul(p[0], p[0])); }, {nl}));
  Tensor g = randn({6}), be = randn({6});
  track(grad_check([&](const auto& p) { return sum(mul(layer_norm(p[0], p[1], p[2]), p[0])); },
                   {nl, g, be}));
  Tensor x = randn({2, 3, 6, 6}), w = randn({4, 3, 3, 3}), cb = randn({4});
  track(grad_check([&](const auto& p) { return sum(conv2d(p[0], p[1], p[2], 2, 1)); }, {x, w, cb}));
  track(grad_check([&](const auto& p) { return sum(mul(avg_pool2d(p[0], 2, 2), avg_pool2d(p[0], 2, 2))); }, {x}));
  track(grad_check([&](const auto& p) { return sum(mul(global_avg_pool(p[0]), global_avg_pool(p[0]))); }, {x}));
  Tensor mp({1, 1, 4, 4}, {.1, .9, .2, .8, .5, .3, .7, .4, .6, .05, .95, .15, .35, .85, .25, .45}, true);
  track(grad_check([&](const auto& p) { return sum(max_pool2d(p[0], 2, 2)); }, {mp}, 1e-6));
  Tensor lg = randn({5, 7});
  track(grad_check([&](const auto& p) { return cross_entropy(p[0], {0, 3, -1, 6, 2}); }, {lg}));
  Tensor z = randn({6});
  track(grad_check([&](const auto& p) { return bce_with_logits(p[0], {1, 0, 1, 1, 0, 0}, {1, 0, 1, 0, 1, 1}); }, {z}));

  // full multimodal forward + loss over every parameter (sampled components)
  models::ModelConfig cfg;
  cfg.d_model = 16;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.d_ff = 32;
  cfg.d_v = 8;
  cfg.dropout = 0.0;
  cfg.seed = 17;
  std::mt19937_64 model_rng(cfg.seed);
  models::MultimodalEncoder model(cfg, model_rng);
  models::MultimodalBatch batch;
  batch.batch = 2;
  batch.steps = 3;
  batch.move_tokens = {19, 64, 26, 44, 64, 67};
  batch.text_visible = {1, 0, 1, 1, 0, 0};
  batch.image_visible = {1, 1, 1, 1, 1, 0};
  batch.visual.resize(2 * 3 * cfg.d_v);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (double& v : batch.visual) v = unit(rng);
  const std::vector<int> targets = {-1, 64 - 45, -1, -1, 33, -1};  // arbitrary move ids
  const std::vector<double> labels = {1.0, 0.0};
  auto params = models::parameter_tensors(model.named_parameters());
  std::mt19937_64 fwd_rng(0);
  auto full_loss = [&](const std::vector<Tensor>&) {
    const models::MultimodalOutput out = model.forward(batch, false, fwd_rng);
    return nn::add(nn::cross_entropy(nn::reshape(out.logits, {6, models::Vocab::kSize}), targets),
                   nn::bce_with_logits(out.match_logit, labels));
  };
  // Truncation error shrinks with h while roundoff grows, so validate each
  // tensor at its best step size rather than a single h for the whole stack.
  double full_err = 0.0;
  for (auto& p : params) {
    double tensor_err = 1.0;
    for (const double h : {3e-3, 1e-3, 3e-4, 1e-4})
      tensor_err = std::min(tensor_err, nn::grad_check(full_loss, {p}, h, 3, 99));
    full_err = std::max(full_err, tensor_err);
  }
  track(full_err);

  const double mins = minutes_since(t0);
  std::ostringstream os;
  os << "max relative error " << worst << " (full multimodal pass " << full_err << "), " << mins
     << " min";
  report(3, worst < 1e-4 && mins < 5.0, os.str());
}

// --------------------------------------------- criterion 4: no leakage

void criterion_4() {
  models::ModelConfig cfg = desk_model(41);
  cfg.dropout = 0.0;
  train::AnyModel model = train::AnyModel::create(train::ModelKind::Multimodal, cfg);
  data::Corpus corpus = make_corpus(30, 4100);
  train::FeatureCache cache(train::pooling_featurizer(), &corpus);
  cfg.d_visual_in = 0;  // unused; featurizer width differs on purpose below
  models::ModelConfig mm_cfg = desk_model(41);
  mm_cfg.dropout = 0.0;
  mm_cfg.d_visual_in = 1200;
  model = train::AnyModel::create(train::ModelKind::Multimodal, mm_cfg);

  std::mt19937_64 rng(44);
  nn::NoGradGuard guard;
  std::mt19937_64 fwd_rng(0);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int game_id = corpus.train_ids[trial % corpus.train_ids.size()];
    const auto& game = corpus.games[game_id];
    const int len = static_cast<int>(game.moves.size());
    std::uniform_int_distribution<int> pick_s(2, len);
    const int s = pick_s(rng);
    std::uniform_int_distribution<int> pick_t(1, s - 1);  // ensure a masked future exists
    const int t = pick_t(rng);
    const data::MaskedExample ex = data::make_future_mask_example(game, game_id, s, t);

    models::MultimodalBatch batch;
    batch.batch = 1;
    batch.steps = s;
    batch.move_tokens = ex.input_tokens;
    batch.text_visible = ex.text_visible;
    batch.image_visible = ex.image_visible;
    batch.visual = cache.game_features(game_id);
    batch.visual.resize(static_cast<size_t>(s) * 1200);

    const auto base = model.multimodal->forward(batch, false, fwd_rng);
    std::vector<double> base_row(models::Vocab::kSize);
    for (int v = 0; v < models::Vocab::kSize; ++v)
      base_row[v] = base.logits.values()[(t - 1) * models::Vocab::kSize + v];

    // Scramble the future: every invisible image row (these hold real renders
    // of future boards) and every masked text slot other than the read
    // position itself, whose input must stay the MASK token.
    std::uniform_int_distribution<int> tok(0, 63);
    std::uniform_real_distribution<double> unit(-3.0, 3.0);
    for (int i = 0; i < s; ++i) {
      if (!batch.text_visible[i] && i != t - 1) batch.move_tokens[i] = tok(rng);
      if (!batch.image_visible[i])
        for (int j = 0; j < 1200; ++j) batch.visual[static_cast<size_t>(i) * 1200 + j] = unit(rng);
    }
    const auto scrambled = model.multimodal->forward(batch, false, fwd_rng);
    for (int v = 0; v < models::Vocab::kSize; ++v)
      worst = std::max(worst,
                       std::abs(base_row[v] -
                                scrambled.logits.values()[(t - 1) * models::Vocab::kSize + v]));
  }
  std::ostringstream os;
  os << "max m_t logit change under future scrambling " << worst << " over 100 cases";
  report(4, worst < 1e-5, os.str());
}

// --------------------------------------------- criteria 5-7: training

void criterion_5() {
  build_stack();
  const double mm2k = test_accuracy(g_stack.multimodal2k, g_stack.corpus2k, false);
  const double mm1k = test_accuracy(g_stack.multimodal1k, g_stack.corpus1k, false);
  const double vis1k = test_accuracy(g_stack.vision1k, g_stack.corpus1k, false);
  const double text2k = test_accuracy(g_stack.text2k, g_stack.corpus2k, false);
  const double floor = eval::random_predictor_floor(g_stack.corpus2k, g_stack.corpus2k.test_ids);

  const bool a = mm2k >= 70.0;
  const bool b = mm1k - vis1k >= 15.0;
  const bool c = text2k - floor >= 40.0;
  const bool budget = g_stack.mm2k_minutes <= 30 && g_stack.mm1k_minutes <= 30 &&
                      g_stack.vision_minutes <= 30 && g_stack.text_minutes <= 30;
  std::ostringstream os;
  os << "multimodal@2k " << mm2k << "% (>=70); multimodal@1k " << mm1k << "% vs vision@1k "
     << vis1k << "% (gap >=15); text@2k " << text2k << "% vs floor " << floor
     << "% (gap >=40); budgets " << g_stack.vision_minutes << "/" << g_stack.mm1k_minutes << "/"
     << g_stack.mm2k_minutes << "/" << g_stack.text_minutes << " min";
  report(5, a && b && c && budget, os.str());
}

void criterion_6() {
  build_stack();
  const double full = test_accuracy(g_stack.multimodal1k, g_stack.corpus1k, false);
  const double ablated = test_accuracy(g_stack.multimodal1k_noftm, g_stack.corpus1k, false);
  std::ostringstream os;
  os << "full objective " << full << "% vs no-future-masking " << ablated << "% (drop "
     << full - ablated << " >= 10)";
  report(6, full - ablated >= 10.0, os.str());
}

void criterion_7() {
  build_stack();
  const double text = test_accuracy(g_stack.text2k, g_stack.corpus2k, false);
  const double text_rot = test_accuracy(g_stack.text2k, g_stack.corpus2k, true);
  const double vis = test_accuracy(g_stack.vision1k, g_stack.corpus1k, false);
  const double vis_rot = test_accuracy(g_stack.vision1k, g_stack.corpus1k, true);
  const double mm = test_accuracy(g_stack.multimodal1k, g_stack.corpus1k, false);
  const double mm_rot = test_accuracy(g_stack.multimodal1k, g_stack.corpus1k, true);
  const double seq_gap = std::abs(text - text_rot);
  const double vis_gap = vis - vis_rot;
  const double mm_gap = std::abs(mm - mm_rot);
  std::ostringstream os;
  os << "rotation gaps: sequence " << seq_gap << " (<3), vision " << vis_gap << " (>10), "
     << "multimodal " << mm_gap << " (<5); test games "
     << g_stack.corpus1k.test_ids.size();
  report(7, seq_gap < 3.0 && vis_gap > 10.0 && mm_gap < 5.0 &&
                g_stack.corpus1k.test_ids.size() >= 150,
         os.str());
}

// --------------------------------------------- criterion 8: probing

double majority_baseline(const probe::ProbeDataset& ds) {
  probe::ProbeReport r;
  std::array<double, 64> per_tile{};
  for (int t = 0; t < 64; ++t) {
    int counts[3] = {0, 0, 0};
    for (int i = 0; i < ds.n(); ++i) ++counts[ds.labels[i][t]];
    const int maj = static_cast<int>(std::max_element(counts, counts + 3) - counts);
    int tp[3] = {0, 0, 0}, fp[3] = {0, 0, 0}, fn[3] = {0, 0, 0};
    bool present[3] = {false, false, false};
    for (int i = 0; i < ds.n(); ++i) {
      const int gold = ds.labels[i][t];
      present[gold] = true;
      if (gold == maj) ++tp[gold];
      else { ++fn[gold]; ++fp[maj]; }
    }
    double f1 = 0;
    int n_classes = 0;
    for (int c = 0; c < 3; ++c) {
      if (!present[c]) continue;
      const int denom = 2 * tp[c] + fp[c] + fn[c];
      f1 += denom ? 2.0 * tp[c] / denom : 0.0;
      ++n_classes;
    }
    per_tile[t] = n_classes ? f1 / n_classes : 0.0;
  }
  double total = 0;
  for (double v : per_tile) total += v;
  return total / 64.0;
}

void criterion_8() {
  build_stack();
  probe::ProbeOptions opts;
  opts.max_epochs = 120;
  opts.seed = 81;

  // trained text model sweep + baseline + shuffled control
  auto sweep = probe::probe_sweep(g_stack.text2k, g_stack.corpus2k, 2, 81, nullptr, opts);
  double best_f1 = 0;
  for (const auto& r : sweep) best_f1 = std::max(best_f1, r.macro_f1);

  probe::ProbeDataset full = probe::extract_probe_dataset(
      g_stack.text2k, g_stack.corpus2k, g_stack.corpus2k.test_ids, 0, 2, 81);
  const double baseline = majority_baseline(full);

  // shuffled-label control on the best layer's activations
  int best_layer = 0;
  for (const auto& r : sweep)
    if (r.macro_f1 >= sweep[best_layer].macro_f1) best_layer = r.layer;
  probe::ProbeDataset shuffled = probe::extract_probe_dataset(
      g_stack.text2k, g_stack.corpus2k, g_stack.corpus2k.test_ids, best_layer, 2, 81);
  std::mt19937_64 rng(82);
  std::shuffle(shuffled.labels.begin(), shuffled.labels.end(), rng);
  const int n = shuffled.n();
  auto subset = [&](const probe::ProbeDataset& ds, int begin, int end) {
    probe::ProbeDataset out;
    out.dim = ds.dim;
    for (int i = begin; i < end; ++i) {
      out.activations.insert(out.activations.end(),
                             ds.activations.begin() + static_cast<size_t>(i) * ds.dim,
                             ds.activations.begin() + static_cast<size_t>(i + 1) * ds.dim);
      out.labels.push_back(ds.labels[i]);
      out.provenance.push_back(ds.provenance[i]);
    }
    return out;
  };
  const probe::LinearProbe ctrl_probe =
      probe::train_probe(subset(shuffled, 0, n * 7 / 10), subset(shuffled, n * 7 / 10, n * 8 / 10), opts);
  const double control =
      probe::score_probe(ctrl_probe, subset(shuffled, n * 8 / 10, n)).macro_f1;

  // untrained text model
  train::AnyModel fresh_text = train::AnyModel::create(train::ModelKind::TextEncoder, desk_model(3));
  auto fresh_sweep = probe::probe_sweep(fresh_text, g_stack.corpus2k, 2, 81, nullptr, opts);
  double fresh_best = 0;
  for (const auto& r : fresh_sweep) fresh_best = std::max(fresh_best, r.macro_f1);

  // multimodal at init with the pretrained conv encoder vs text at init, layer 1
  models::ModelConfig mm_cfg = desk_model(8);
  train::AnyModel fresh_mm = train::AnyModel::create(train::ModelKind::Multimodal, mm_cfg);
  train::FeatureCache cache(train::conv_featurizer(g_stack.vision1k.vision), &g_stack.corpus2k);
  auto mm_sweep = probe::probe_sweep(fresh_mm, g_stack.corpus2k, 2, 81, &cache, opts);
  const double mm_init_layer1 = mm_sweep[1].macro_f1;
  const double text_init_layer1 = fresh_sweep[1].macro_f1;

  const bool a = best_f1 >= baseline + 0.15 && best_f1 >= control + 0.15;
  const bool b = std::abs(fresh_best - baseline) <= 0.05;
  const bool c = mm_init_layer1 > text_init_layer1;
  std::ostringstream os;
  os << "best layer F1 " << best_f1 << " vs baseline " << baseline << " / control " << control
     << "; untrained best " << fresh_best << " (|diff|<=0.05); init layer-1 multimodal "
     << mm_init_layer1 << " > text " << text_init_layer1;
  report(8, a && b && c, os.str());
}

// --------------------------------------------- criterion 9: alignment

// anisotropic and skewed so the rotation is identifiable from the cloud shape
Eigen::MatrixXd planted_cloud(int n, int d, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> expo(1.0);
  Eigen::MatrixXd m(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) m(i, j) = (expo(rng) - 1.0) * (1.0 + 2.0 * j / d);
  return m;
}

void criterion_9() {
  build_stack();
  const auto t0 = std::chrono::steady_clock::now();
  const int n = 3000, d = 128;
  const Eigen::MatrixXd src = planted_cloud(n, d, 91);
  Eigen::MatrixXd q;
  {
    std::mt19937_64 rng(92);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::MatrixXd g(d, d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) g(i, j) = gauss(rng);
    q = Eigen::MatrixXd(Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ());
  }
  const Eigen::MatrixXd tgt = src * q;
  const int n_train = 2500;

  const align::AlignmentMap sup =
      align::align_supervised(src.topRows(n_train), tgt.topRows(n_train));
  const double sup_cos =
      align::eval_alignment(sup, src.bottomRows(n - n_train), tgt.bottomRows(n - n_train));

  align::UnsupervisedOptions uopts;
  const align::AlignmentMap unsup =
      align::align_unsupervised(src.topRows(n_train), tgt.topRows(n_train), 93, uopts);
  const double unsup_cos =
      align::eval_alignment(unsup, src.bottomRows(n - n_train), tgt.bottomRows(n - n_train));

  // real model pairs: supervised >= unsupervised - 0.02
  struct Pair { const train::AnyModel* a; const train::AnyModel* b; };
  std::vector<Pair> pairs = {{&g_stack.text2k, &g_stack.multimodal2k},
                             {&g_stack.text2k, &g_stack.vision1k},
                             {&g_stack.multimodal2k, &g_stack.vision1k}};
  bool real_ok = true;
  std::ostringstream real_detail;
  for (const Pair& pair : pairs) {
    std::unique_ptr<train::FeatureCache> cache_a, cache_b;
    auto features = [&](const train::AnyModel& model,
                        std::unique_ptr<train::FeatureCache>& cache) {
      if (model.kind == train::ModelKind::Multimodal)
        cache = std::make_unique<train::FeatureCache>(
            train::conv_featurizer(g_stack.vision1k.vision), &g_stack.corpus2k);
      return align::extract_features(model, g_stack.corpus2k, g_stack.corpus2k.test_ids, 94,
                                     cache.get());
    };
    const align::FeatureSet fa = features(*pair.a, cache_a);
    const align::FeatureSet fb = features(*pair.b, cache_b);
    const Eigen::Index rows = fa.matrix.rows();
    const Eigen::Index rt = rows * 8 / 10;
    const align::SharedProjection proj =
        align::project_to_shared(fa.matrix.topRows(rt), fb.matrix.topRows(rt));
    const Eigen::MatrixXd pa = proj.a.transform(fa.matrix);
    const Eigen::MatrixXd pb = proj.b.transform(fb.matrix);
    const align::AlignmentMap s = align::align_supervised(pa.topRows(rt), pb.topRows(rt));
    const align::AlignmentMap u = align::align_unsupervised(pa.topRows(rt), pb.topRows(rt), 95);
    const double sc = align::eval_alignment(s, pa.bottomRows(rows - rt), pb.bottomRows(rows - rt));
    const double uc = align::eval_alignment(u, pa.bottomRows(rows - rt), pb.bottomRows(rows - rt));
    real_detail << " [" << fa.model_id << "->" << fb.model_id << " sup " << sc << " unsup " << uc
                << "]";
    if (sc < uc - 0.02) real_ok = false;
  }

  const double mins = minutes_since(t0);
  std::ostringstream os;
  os << "planted map: supervised " << sup_cos << " (>=0.99), unsupervised " << unsup_cos
     << " (>=0.8), ||W^T W - I|| " << sup.orthogonality_error() << "/"
     << unsup.orthogonality_error() << " (<1e-6); real pairs" << real_detail.str() << "; "
     << mins << " min";
  report(9, sup_cos >= 0.99 && unsup_cos >= 0.8 && sup.orthogonality_error() < 1e-6 &&
                unsup.orthogonality_error() < 1e-6 && real_ok,
         os.str());
}

// --------------------------------------------- criterion 10: reproducibility

void criterion_10() {
  config::ExperimentConfig cfg = config::parse_config(
      "[corpus]\ngames = 60\nseed = 5001\n"
      "[model]\nkind = text_encoder\nd_model = 32\nn_layers = 1\nn_heads = 2\nd_ff = 64\n"
      "seed = 9\n"
      "[schedule]\nmax_epochs = 6\nvalidate_every = 3\nbatch_size = 32\n");
  manifest::Manifest mani;
  mani.command = "train";
  mani.seed = cfg.seed;
  mani.resolved_config = cfg.serialize();

  auto run = [](const config::ExperimentConfig& c) {
    std::vector<engine::GameRecord> games;
    for (int i = 0; i < c.corpus_games; ++i)
      games.push_back(engine::generate_random_game(c.corpus_seed + i));
    data::Corpus corpus =
        data::build_corpus(std::move(games), c.corpus_seed ^ 0x5851f42d4c957f2dull, c.scale);
    train::AnyModel model =
        train::AnyModel::create(train::kind_from_name(c.model_kind), c.model);
    return train::train_model(model, corpus, c.schedule, c.seed);
  };

  const train::TrainResult first = run(cfg);
  // re-run strictly from the manifest's resolved config
  const manifest::Manifest round_trip = manifest::Manifest::from_json(mani.to_json());
  const config::ExperimentConfig replay_cfg = config::parse_config(round_trip.resolved_config);
  const train::TrainResult second = run(replay_cfg);

  bool identical = first.history.size() == second.history.size();
  for (size_t i = 0; identical && i < first.history.size(); ++i) {
    const auto& a = first.history[i];
    const auto& b = second.history[i];
    identical = a.epoch == b.epoch && a.split == b.split && a.metric == b.metric &&
                std::memcmp(&a.value, &b.value, sizeof(double)) == 0;  // bit-identical
  }
  std::ostringstream os;
  os << first.history.size() << " metric rows bit-identical across a manifest re-run (wall clock excluded)";
  report(10, identical, os.str());
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  auto run = [&](int k, void (*fn)()) {
    if (wanted.empty() || wanted.count(k)) fn();
  };
  run(1, criterion_1);
  run(2, criterion_2);
  run(3, criterion_3);
  run(4, criterion_4);
  run(5, criterion_5);
  run(6, criterion_6);
  run(7, criterion_7);
  run(8, criterion_8);
  run(9, criterion_9);
  run(10, criterion_10);
  return g_failures == 0 ? 0 : 1;
}
