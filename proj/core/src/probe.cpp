#include "olab/probe.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "olab/errors.hpp"
#include "olab/ops.hpp"
#include "olab/optim.hpp"

namespace olab::probe {

namespace nn = olab::nn;
using models::Vocab;

namespace {

std::array<uint8_t, 64> board_labels(const engine::Board& board) {
  std::array<uint8_t, 64> out{};
  const engine::Cell own =
      board.side_to_move == engine::Player::Black ? engine::Cell::Black : engine::Cell::White;
  for (int i = 0; i < 64; ++i) {
    if (board.cells[i] == engine::Cell::Empty) out[i] = kEmpty;
    else out[i] = board.cells[i] == own ? kMine : kTheirs;
  }
  return out;
}

struct Sample {
  int game_id = 0;
  int t = 0;  // 1-based
};

std::vector<Sample> sample_positions(const data::Corpus& corpus, const std::vector<int>& game_ids,
                                     int samples_per_game, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Sample> samples;
  for (int id : game_ids) {
    const int len = static_cast<int>(corpus.games[id].moves.size());
    std::vector<int> steps(len);
    std::iota(steps.begin(), steps.end(), 1);
    std::shuffle(steps.begin(), steps.end(), rng);
    const int take = std::min(samples_per_game, len);
    for (int k = 0; k < take; ++k) samples.push_back({id, steps[k]});
  }
  return samples;
}

// One forward per chunk filling every layer's dataset at once.
std::vector<ProbeDataset> extract_all_layers(const train::AnyModel& model,
                                             const data::Corpus& corpus,
                                             const std::vector<Sample>& samples,
                                             train::FeatureCache* features) {
  if (model.kind == train::ModelKind::Vision)
    throw ConfigError("probing needs per-layer hidden states; the vision model has none");
  if (model.kind == train::ModelKind::Multimodal && !features)
    throw ConfigError("extract_probe_dataset: multimodal extraction needs a feature cache");

  const models::ModelConfig& cfg = model.config();
  const int n_layers = cfg.n_layers;
  std::vector<ProbeDataset> out(n_layers + 1);
  for (auto& ds : out) ds.dim = cfg.d_model;

  nn::NoGradGuard guard;
  std::mt19937_64 rng(0);
  const size_t chunk = 64;
  for (size_t begin = 0; begin < samples.size(); begin += chunk) {
    const size_t end = std::min(samples.size(), begin + chunk);
    const int B = static_cast<int>(end - begin);
    int max_t = 0;
    for (size_t i = begin; i < end; ++i) max_t = std::max(max_t, samples[i].t);

    models::HiddenStates hidden;
    std::vector<int> read_pos(B);

    if (model.kind == train::ModelKind::Multimodal) {
      const int d_in = features->featurizer().dim;
      models::MultimodalBatch batch;
      batch.batch = B;
      batch.steps = max_t;
      batch.move_tokens.assign(static_cast<size_t>(B) * max_t, Vocab::kPad);
      batch.visual.assign(static_cast<size_t>(B) * max_t * d_in, 0.0);
      batch.text_visible.assign(static_cast<size_t>(B) * max_t, 0);
      batch.image_visible.assign(batch.text_visible.size(), 0);
      for (int b = 0; b < B; ++b) {
        const Sample& s = samples[begin + b];
        const auto& moves = corpus.games[s.game_id].moves;
        const auto& feats = features->game_features(s.game_id);
        const size_t base = static_cast<size_t>(b) * max_t;
        for (int i = 0; i < s.t; ++i) {
          batch.move_tokens[base + i] = moves[i].index;
          batch.text_visible[base + i] = 1;
          batch.image_visible[base + i] = 1;
        }
        std::copy_n(feats.data(), static_cast<size_t>(s.t) * d_in,
                    batch.visual.data() + base * d_in);
        read_pos[b] = models::MultimodalEncoder::text_position(max_t, s.t - 1);
      }
      hidden = model.multimodal->forward(batch, false, rng).hidden;
    } else {
      models::SeqBatch batch;
      batch.batch = B;
      batch.seq_len = 1 + max_t;
      batch.tokens.assign(static_cast<size_t>(B) * batch.seq_len, Vocab::kPad);
      batch.key_visible.assign(batch.tokens.size(), 0);
      for (int b = 0; b < B; ++b) {
        const Sample& s = samples[begin + b];
        const auto& moves = corpus.games[s.game_id].moves;
        const size_t base = static_cast<size_t>(b) * batch.seq_len;
        batch.tokens[base] = Vocab::kCls;
        batch.key_visible[base] = 1;
        for (int i = 0; i < s.t; ++i) {
          batch.tokens[base + 1 + i] = moves[i].index;
          batch.key_visible[base + 1 + i] = 1;
        }
        read_pos[b] = s.t;
      }
      hidden = model.kind == train::ModelKind::TextDecoder
                   ? model.decoder->forward(batch, false, rng).hidden
                   : model.text_encoder->forward(batch, false, rng).hidden;
    }

    for (int b = 0; b < B; ++b) {
      const Sample& s = samples[begin + b];
      const engine::GameRecord& game = corpus.games[s.game_id];
      const engine::Board after =
          s.t < static_cast<int>(game.moves.size())
              ? engine::replay(game)[s.t]  // b_{t+1}
              : engine::final_board(game);
      for (int layer = 0; layer <= n_layers; ++layer) {
        std::vector<double> act = hidden.at(layer, b, read_pos[b]);
        out[layer].activations.insert(out[layer].activations.end(), act.begin(), act.end());
        out[layer].labels.push_back(board_labels(after));
        out[layer].provenance.emplace_back(s.game_id, s.t);
      }
    }
  }
  return out;
}

}  // namespace

ProbeDataset extract_probe_dataset(const train::AnyModel& model, const data::Corpus& corpus,
                                   const std::vector<int>& game_ids, int layer,
                                   int samples_per_game, uint64_t seed,
                                   train::FeatureCache* features) {
  if (layer < 0 || layer > model.config().n_layers)
    throw ConfigError("extract_probe_dataset: layer out of range");
  auto samples = sample_positions(corpus, game_ids, samples_per_game, seed);
  return extract_all_layers(model, corpus, samples, features)[layer];
}

LinearProbe train_probe(const ProbeDataset& train, const ProbeDataset& validation,
                        const ProbeOptions& opts) {
  if (train.n() == 0 || validation.n() == 0)
    throw DataError("train_probe: empty probe dataset");
  const int d = train.dim;
  std::mt19937_64 rng(opts.seed);
  LinearProbe probe;
  probe.dim = d;
  probe.w = nn::Tensor::truncated_normal({d, 192}, 0.02, rng, true);
  probe.b = nn::Tensor::zeros({1, 192}, true);
  nn::Adam opt({probe.w, probe.b}, opts.learning_rate);

  auto batch_loss = [&](const ProbeDataset& ds, int begin, int end) {
    const int n = end - begin;
    std::vector<double> x(ds.activations.begin() + static_cast<size_t>(begin) * d,
                          ds.activations.begin() + static_cast<size_t>(end) * d);
    std::vector<int> targets(static_cast<size_t>(n) * 64);
    for (int i = 0; i < n; ++i)
      for (int t = 0; t < 64; ++t)
        targets[static_cast<size_t>(i) * 64 + t] = ds.labels[begin + i][t];
    nn::Tensor logits = nn::add(nn::matmul(nn::Tensor({n, d}, std::move(x)), probe.w), probe.b);
    return nn::cross_entropy(nn::reshape(logits, {n * 64, 3}), targets);
  };

  std::vector<int> order(train.n());
  std::iota(order.begin(), order.end(), 0);
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<double> best_w, best_b;
  int bad_epochs = 0;

  for (int epoch = 0; epoch < opts.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (int begin = 0; begin < train.n(); begin += opts.batch_size) {
      const int end = std::min(train.n(), begin + opts.batch_size);
      // gather the shuffled slice into a contiguous scratch dataset
      ProbeDataset scratch;
      scratch.dim = d;
      scratch.activations.reserve(static_cast<size_t>(end - begin) * d);
      for (int i = begin; i < end; ++i) {
        const int r = order[i];
        scratch.activations.insert(scratch.activations.end(),
                                   train.activations.begin() + static_cast<size_t>(r) * d,
                                   train.activations.begin() + static_cast<size_t>(r + 1) * d);
        scratch.labels.push_back(train.labels[r]);
      }
      nn::Tensor loss = batch_loss(scratch, 0, scratch.n());
      if (!std::isfinite(loss.item())) throw NumericalError("train_probe: loss diverged");
      opt.zero_grad();
      loss.backward();
      opt.step();
    }
    double val;
    {
      nn::NoGradGuard guard;
      val = batch_loss(validation, 0, validation.n()).item();
    }
    if (val < best_val - 1e-6) {
      best_val = val;
      best_w = probe.w.values();
      best_b = probe.b.values();
      bad_epochs = 0;
    } else if (++bad_epochs >= opts.patience) {
      break;
    }
  }
  if (!best_w.empty()) {
    probe.w.mutable_values() = best_w;
    probe.b.mutable_values() = best_b;
  }
  return probe;
}

std::vector<std::array<uint8_t, 64>> LinearProbe::predict(const ProbeDataset& data) const {
  nn::NoGradGuard guard;
  const int n = data.n();
  std::vector<std::array<uint8_t, 64>> preds(n);
  const size_t chunk = 512;
  for (size_t begin = 0; begin < static_cast<size_t>(n); begin += chunk) {
    const size_t end = std::min<size_t>(n, begin + chunk);
    const int bs = static_cast<int>(end - begin);
    std::vector<double> x(data.activations.begin() + begin * dim,
                          data.activations.begin() + end * dim);
    nn::Tensor logits = nn::add(nn::matmul(nn::Tensor({bs, dim}, std::move(x)), w), b);
    const auto& vals = logits.values();
    for (int i = 0; i < bs; ++i) {
      for (int t = 0; t < 64; ++t) {
        const double* row = vals.data() + (static_cast<size_t>(i) * 192 + t * 3);
        int arg = 0;
        if (row[1] > row[arg]) arg = 1;
        if (row[2] > row[arg]) arg = 2;
        preds[begin + i][t] = static_cast<uint8_t>(arg);
      }
    }
  }
  return preds;
}

ProbeReport score_probe(const LinearProbe& probe, const ProbeDataset& test) {
  auto preds = probe.predict(test);
  ProbeReport report;
  for (int t = 0; t < 64; ++t) {
    int tp[3] = {0, 0, 0}, fp[3] = {0, 0, 0}, fn[3] = {0, 0, 0};
    bool present[3] = {false, false, false};
    for (int i = 0; i < test.n(); ++i) {
      const int gold = test.labels[i][t];
      const int pred = preds[i][t];
      present[gold] = true;
      if (gold == pred) ++tp[gold];
      else { ++fn[gold]; ++fp[pred]; }
    }
    double f1_sum = 0.0;
    int n_classes = 0;
    bool missing = false;
    for (int c = 0; c < 3; ++c) {
      if (!present[c]) { missing = true; continue; }
      const int denom = 2 * tp[c] + fp[c] + fn[c];
      f1_sum += denom ? 2.0 * tp[c] / denom : 0.0;
      ++n_classes;
    }
    report.per_tile_f1[t] = n_classes ? f1_sum / n_classes : 0.0;
    report.tiles_with_missing_classes += missing;
  }
  report.macro_f1 =
      std::accumulate(report.per_tile_f1.begin(), report.per_tile_f1.end(), 0.0) / 64.0;
  return report;
}

std::vector<ProbeReport> probe_sweep(const train::AnyModel& model, const data::Corpus& corpus,
                                     int samples_per_game, uint64_t seed,
                                     train::FeatureCache* features, const ProbeOptions& opts) {
  auto samples = sample_positions(corpus, corpus.test_ids, samples_per_game, seed);
  auto layers = extract_all_layers(model, corpus, samples, features);

  // 70/10/20 row split, identical across layers.
  const int n = layers[0].n();
  if (n < 10) throw DataError("probe_sweep: too few probe rows");
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  std::shuffle(order.begin(), order.end(), rng);
  const int n_train = static_cast<int>(std::llround(n * 0.70));
  const int n_val = static_cast<int>(std::llround(n * 0.10));

  auto subset = [&](const ProbeDataset& ds, int begin, int end) {
    ProbeDataset out;
    out.dim = ds.dim;
    for (int i = begin; i < end; ++i) {
      const int r = order[i];
      out.activations.insert(out.activations.end(),
                             ds.activations.begin() + static_cast<size_t>(r) * ds.dim,
                             ds.activations.begin() + static_cast<size_t>(r + 1) * ds.dim);
      out.labels.push_back(ds.labels[r]);
      out.provenance.push_back(ds.provenance[r]);
    }
    return out;
  };

  std::vector<ProbeReport> sweep;
  for (int layer = 0; layer < static_cast<int>(layers.size()); ++layer) {
    ProbeOptions layer_opts = opts;
    layer_opts.seed = seed + layer;
    LinearProbe probe = train_probe(subset(layers[layer], 0, n_train),
                                    subset(layers[layer], n_train, n_train + n_val), layer_opts);
    ProbeReport report = score_probe(probe, subset(layers[layer], n_train + n_val, n));
    report.model_id = train::kind_name(model.kind);
    report.layer = layer;
    sweep.push_back(std::move(report));
  }
  return sweep;
}

std::string ProbeReport::to_json() const {
  std::ostringstream os;
  os << "{\"model_id\": \"" << model_id << "\", \"layer\": " << layer
     << ", \"macro_f1\": " << macro_f1
     << ", \"tiles_with_missing_classes\": " << tiles_with_missing_classes
     << ", \"per_tile_f1\": [";
  for (int t = 0; t < 64; ++t) {
    if (t) os << ", ";
    os << per_tile_f1[t];
  }
  os << "]}";
  return os.str();
}

void write_sweep_csv(const std::string& path, const std::vector<ProbeReport>& sweep) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw DataError("write_sweep_csv: cannot open " + path);
  std::fprintf(f, "model_id,layer,macro_f1,tiles_with_missing_classes\n");
  for (const auto& r : sweep)
    std::fprintf(f, "%s,%d,%.6f,%d\n", r.model_id.c_str(), r.layer, r.macro_f1,
                 r.tiles_with_missing_classes);
  std::fclose(f);
}

}  // namespace olab::probe
