#include "olab/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <numeric>

#include "olab/errors.hpp"
#include "olab/eval.hpp"
#include "olab/imaging.hpp"
#include "olab/optim.hpp"

namespace olab::train {

namespace nn = olab::nn;
using models::Vocab;

std::string kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::TextEncoder: return "text_encoder";
    case ModelKind::TextDecoder: return "text_decoder";
    case ModelKind::Vision: return "vision";
    case ModelKind::Multimodal: return "multimodal";
  }
  throw ConfigError("unknown model kind");
}

ModelKind kind_from_name(const std::string& name) {
  if (name == "text_encoder") return ModelKind::TextEncoder;
  if (name == "text_decoder") return ModelKind::TextDecoder;
  if (name == "vision") return ModelKind::Vision;
  if (name == "multimodal") return ModelKind::Multimodal;
  throw ConfigError("unknown model kind: " + name);
}

AnyModel AnyModel::create(ModelKind kind, const models::ModelConfig& cfg) {
  cfg.validate();
  AnyModel m;
  m.kind = kind;
  std::mt19937_64 rng(cfg.seed);
  switch (kind) {
    case ModelKind::TextEncoder:
      m.text_encoder = std::make_shared<models::TextEncoder>(cfg, rng);
      break;
    case ModelKind::TextDecoder:
      m.decoder = std::make_shared<models::CausalDecoder>(cfg, rng);
      break;
    case ModelKind::Vision:
      m.vision = std::make_shared<models::ResidualConvEncoder>(cfg, rng);
      break;
    case ModelKind::Multimodal:
      m.multimodal = std::make_shared<models::MultimodalEncoder>(cfg, rng);
      break;
  }
  return m;
}

const models::ModelConfig& AnyModel::config() const {
  switch (kind) {
    case ModelKind::TextEncoder: return text_encoder->config();
    case ModelKind::TextDecoder: return decoder->config();
    case ModelKind::Vision: return vision->config();
    case ModelKind::Multimodal: return multimodal->config();
  }
  throw ConfigError("unknown model kind");
}

models::ParamMap AnyModel::named_parameters() const {
  switch (kind) {
    case ModelKind::TextEncoder: return text_encoder->named_parameters();
    case ModelKind::TextDecoder: return decoder->named_parameters();
    case ModelKind::Vision: return vision->named_parameters();
    case ModelKind::Multimodal: return multimodal->named_parameters();
  }
  throw ConfigError("unknown model kind");
}

void AnyModel::save(const std::string& path, const models::TrainMeta& meta) const {
  models::save_checkpoint(path, kind_name(kind), config(), meta, named_parameters());
}

AnyModel AnyModel::load(const std::string& path) {
  models::CheckpointData data = models::load_checkpoint(path);
  AnyModel m = create(kind_from_name(data.kind), data.config);
  models::load_state(m.named_parameters(), data);
  return m;
}

namespace {

imaging::RenderSpec spec_for_side(int side) {
  imaging::RenderSpec spec;
  spec.image_side = side;
  spec.validate();
  return spec;
}

}  // namespace

BoardFeaturizer pooling_featurizer(int render_side) {
  imaging::RenderSpec spec = spec_for_side(render_side);
  BoardFeaturizer f;
  f.dim = 1200;
  f.id = "pooling";
  f.batch = [spec](const std::vector<engine::Board>& boards) {
    std::vector<double> out;
    out.reserve(boards.size() * 1200);
    for (const auto& b : boards) {
      auto v = imaging::pool_features(imaging::render(b, spec));
      out.insert(out.end(), v.begin(), v.end());
    }
    return out;
  };
  return f;
}

BoardFeaturizer area_featurizer(int render_side) {
  imaging::RenderSpec spec = spec_for_side(render_side);
  BoardFeaturizer f;
  f.dim = 1200;
  f.id = "area";
  f.batch = [spec](const std::vector<engine::Board>& boards) {
    std::vector<double> out;
    out.reserve(boards.size() * 1200);
    for (const auto& b : boards) {
      auto v = imaging::area_features(imaging::render(b, spec));
      out.insert(out.end(), v.begin(), v.end());
    }
    return out;
  };
  return f;
}

BoardFeaturizer conv_featurizer(std::shared_ptr<models::ResidualConvEncoder> encoder) {
  const int side = encoder->config().image_side;
  imaging::RenderSpec spec = spec_for_side(side);
  const int dim = encoder->config().d_v;
  BoardFeaturizer f;
  f.dim = dim;
  f.id = "conv_encoder";
  f.batch = [encoder, spec, side, dim](const std::vector<engine::Board>& boards) {
    std::vector<double> out;
    out.reserve(boards.size() * dim);
    nn::NoGradGuard guard;
    std::mt19937_64 rng(0);  // eval mode, dropout off
    const size_t chunk = 64;
    for (size_t begin = 0; begin < boards.size(); begin += chunk) {
      const size_t end = std::min(boards.size(), begin + chunk);
      const int n = static_cast<int>(end - begin);
      std::vector<double> pixels(static_cast<size_t>(n) * 3 * side * side);
      for (int i = 0; i < n; ++i) {
        imaging::BoardImage img = imaging::render(boards[begin + i], spec);
        double* dst = pixels.data() + static_cast<size_t>(i) * 3 * side * side;
        for (int ch = 0; ch < 3; ++ch)
          for (int p = 0; p < side * side; ++p)
            dst[ch * side * side + p] = img.pixels[p * 3 + ch] / 255.0;
      }
      nn::Tensor images({n, 3, side, side}, std::move(pixels));
      nn::Tensor v = encoder->encode(images, false, rng);
      const auto& vals = v.values();
      out.insert(out.end(), vals.begin(), vals.end());
    }
    return out;
  };
  return f;
}

const std::vector<double>& FeatureCache::game_features(int game_id) {
  auto it = cache_.find(game_id);
  if (it != cache_.end()) return it->second;
  std::vector<engine::Board> boards = engine::replay(corpus_->games[game_id]);
  return cache_.emplace(game_id, featurizer_.batch(boards)).first->second;
}

namespace {

struct Snapshot {
  std::vector<std::vector<double>> values;
};

Snapshot take_snapshot(const models::ParamMap& params) {
  Snapshot s;
  s.values.reserve(params.size());
  for (const auto& [name, t] : params) s.values.push_back(t.values());
  return s;
}

void restore_snapshot(models::ParamMap& params, const Snapshot& s) {
  for (size_t i = 0; i < params.size(); ++i)
    params[i].second.mutable_values() = s.values[i];
}

// Shared layout for both sequence models: [CLS] then s slots, PAD tail.
models::SeqBatch build_seq_batch(const std::vector<data::MaskedExample>& examples,
                                 std::vector<int>& targets) {
  int max_s = 0;
  for (const auto& ex : examples) max_s = std::max(max_s, ex.prefix_len);
  models::SeqBatch batch;
  batch.batch = static_cast<int>(examples.size());
  batch.seq_len = 1 + max_s;
  batch.tokens.assign(static_cast<size_t>(batch.batch) * batch.seq_len, Vocab::kPad);
  batch.key_visible.assign(batch.tokens.size(), 0);
  targets.assign(batch.tokens.size(), -1);
  for (int b = 0; b < batch.batch; ++b) {
    const auto& ex = examples[b];
    const size_t base = static_cast<size_t>(b) * batch.seq_len;
    batch.tokens[base] = Vocab::kCls;
    batch.key_visible[base] = 1;
    for (int i = 0; i < ex.prefix_len; ++i) {
      batch.tokens[base + 1 + i] = ex.input_tokens[i];
      batch.key_visible[base + 1 + i] = ex.text_visible[i];
    }
    for (size_t k = 0; k < ex.target_positions.size(); ++k)
      targets[base + 1 + ex.target_positions[k]] = ex.target_ids[k];
  }
  return batch;
}

// Decoder batch over whole games: position i predicts m_{i+1}.
models::SeqBatch build_decoder_batch(const data::Corpus& corpus, const std::vector<int>& ids,
                                     std::vector<int>& targets) {
  int max_s = 0;
  for (int id : ids) max_s = std::max(max_s, static_cast<int>(corpus.games[id].moves.size()));
  models::SeqBatch batch;
  batch.batch = static_cast<int>(ids.size());
  batch.seq_len = max_s;  // [CLS] m_1 .. m_{s-1}
  batch.tokens.assign(static_cast<size_t>(batch.batch) * batch.seq_len, Vocab::kPad);
  batch.key_visible.assign(batch.tokens.size(), 0);
  targets.assign(batch.tokens.size(), -1);
  for (int b = 0; b < batch.batch; ++b) {
    const auto& moves = corpus.games[ids[b]].moves;
    const int s = static_cast<int>(moves.size());
    const size_t base = static_cast<size_t>(b) * batch.seq_len;
    batch.tokens[base] = Vocab::kCls;
    batch.key_visible[base] = 1;
    for (int i = 1; i < s; ++i) {
      batch.tokens[base + i] = moves[i - 1].index;
      batch.key_visible[base + i] = 1;
    }
    for (int i = 0; i < s; ++i) targets[base + i] = moves[i].index;
  }
  return batch;
}

models::MultimodalBatch build_multimodal_batch(const std::vector<data::MaskedExample>& examples,
                                               FeatureCache& features, std::vector<int>& targets,
                                               std::vector<double>& match_labels,
                                               std::vector<double>& match_weights) {
  const int d_in = features.featurizer().dim;
  int max_s = 0;
  for (const auto& ex : examples) max_s = std::max(max_s, ex.prefix_len);
  models::MultimodalBatch batch;
  batch.batch = static_cast<int>(examples.size());
  batch.steps = max_s;
  batch.move_tokens.assign(static_cast<size_t>(batch.batch) * max_s, Vocab::kPad);
  batch.visual.assign(static_cast<size_t>(batch.batch) * max_s * d_in, 0.0);
  batch.text_visible.assign(static_cast<size_t>(batch.batch) * max_s, 0);
  batch.image_visible.assign(batch.text_visible.size(), 0);
  targets.assign(batch.move_tokens.size(), -1);
  match_labels.assign(batch.batch, 0.0);
  match_weights.assign(batch.batch, 0.0);
  for (int b = 0; b < batch.batch; ++b) {
    const auto& ex = examples[b];
    const size_t base = static_cast<size_t>(b) * max_s;
    const std::vector<double>& feats = features.game_features(ex.game_id);
    for (int i = 0; i < ex.prefix_len; ++i) {
      batch.move_tokens[base + i] = ex.input_tokens[i];
      batch.text_visible[base + i] = ex.text_visible[i];
      batch.image_visible[base + i] = ex.image_visible[i];
      std::copy_n(feats.data() + static_cast<size_t>(i) * d_in, d_in,
                  batch.visual.data() + (base + i) * d_in);
    }
    for (size_t k = 0; k < ex.target_positions.size(); ++k)
      targets[base + ex.target_positions[k]] = ex.target_ids[k];
    if (ex.match_label.has_value()) {
      match_labels[b] = *ex.match_label ? 1.0 : 0.0;
      match_weights[b] = 1.0;
    }
  }
  return batch;
}

data::MaskedExample sample_example(const data::Corpus& corpus, int game_id,
                                   const data::TrainSchedule& sched, bool multimodal,
                                   std::mt19937_64& rng) {
  const auto& game = corpus.games[game_id];
  const int len = static_cast<int>(game.moves.size());
  std::uniform_int_distribution<int> pick_s(1, len);
  const int s = pick_s(rng);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  if (coin(rng) < sched.p_future_mask) {
    std::uniform_int_distribution<int> pick_t(1, s);
    return data::make_future_mask_example(game, game_id, s, pick_t(rng),
                                          sched.future_loss_all_masked);
  }
  data::MaskedExample ex = data::make_random_mask_example(game, game_id, s, rng);
  if (multimodal) data::make_text_image_pair(ex, corpus, rng, sched.p_replace);
  return ex;
}

struct VisionSample {
  int game_id = 0;
  int step = 0;  // 0-based index of the move to predict
};

}  // namespace

TrainResult train_model(AnyModel& model, const data::Corpus& corpus,
                        const data::TrainSchedule& sched, uint64_t seed,
                        FeatureCache* features) {
  if (model.kind == ModelKind::Multimodal) {
    if (!features) throw ConfigError("train_model: multimodal training needs a feature cache");
    if (features->featurizer().dim != model.config().visual_in())
      throw ConfigError("train_model: featurizer width does not match d_visual_in");
  }
  if (corpus.train_ids.empty() || corpus.validation_ids.empty())
    throw DataError("train_model: corpus is missing train or validation games");

  std::mt19937_64 rng(seed);
  models::ParamMap named = model.named_parameters();
  nn::Adam opt(models::parameter_tensors(named), sched.learning_rate);

  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  // Vision training enumerates every (game, step) pair once per epoch.
  std::vector<VisionSample> vision_samples;
  std::vector<std::vector<engine::Board>> replays(corpus.games.size());
  imaging::RenderSpec render_spec;
  if (model.kind == ModelKind::Vision) {
    render_spec.image_side = model.config().image_side;
    render_spec.validate();
    for (int id : corpus.train_ids) {
      replays[id] = engine::replay(corpus.games[id]);
      for (int t = 0; t < static_cast<int>(corpus.games[id].moves.size()); ++t)
        vision_samples.push_back({id, t});
    }
  }

  TrainResult result;
  result.meta.seed = seed;
  double best_metric = -1.0;
  Snapshot best;
  int bad_validations = 0;
  const int side = model.config().image_side;

  for (int epoch = 1; epoch <= sched.max_epochs; ++epoch) {
    // cosine decay to 10% of the base rate across the epoch budget
    const double progress = sched.max_epochs > 1
                                ? static_cast<double>(epoch - 1) / (sched.max_epochs - 1)
                                : 0.0;
    opt.set_learning_rate(sched.learning_rate *
                          (0.1 + 0.45 * (1.0 + std::cos(progress * 3.14159265358979))));
    double epoch_loss = 0.0;
    int n_batches = 0;

    auto run_batch = [&](nn::Tensor loss) {
      const double v = loss.item();
      if (!std::isfinite(v)) throw NumericalError("train_model: loss diverged");
      opt.zero_grad();
      loss.backward();
      opt.step();
      epoch_loss += v;
      ++n_batches;
    };

    if (model.kind == ModelKind::Vision) {
      std::shuffle(vision_samples.begin(), vision_samples.end(), rng);
      const int bs = sched.conv_batch_size;
      int n_steps = (static_cast<int>(vision_samples.size()) + bs - 1) / bs;
      if (sched.max_steps_per_epoch > 0) n_steps = std::min(n_steps, sched.max_steps_per_epoch);
      for (int step = 0; step < n_steps; ++step) {
        const size_t begin = static_cast<size_t>(step) * bs;
        const size_t end = std::min(vision_samples.size(), begin + bs);
        const int n = static_cast<int>(end - begin);
        std::vector<double> pixels(static_cast<size_t>(n) * 3 * side * side);
        std::vector<int> targets(n);
        for (int i = 0; i < n; ++i) {
          const VisionSample& vs = vision_samples[begin + i];
          imaging::BoardImage img = imaging::render(replays[vs.game_id][vs.step], render_spec);
          double* dst = pixels.data() + static_cast<size_t>(i) * 3 * side * side;
          for (int ch = 0; ch < 3; ++ch)
            for (int p = 0; p < side * side; ++p)
              dst[ch * side * side + p] = img.pixels[p * 3 + ch] / 255.0;
          targets[i] = corpus.games[vs.game_id].moves[vs.step].index;
        }
        nn::Tensor images({n, 3, side, side}, std::move(pixels));
        nn::Tensor v = model.vision->encode(images, true, rng);
        run_batch(nn::cross_entropy(model.vision->next_move_logits(v), targets));
      }
    } else {
      std::vector<int> order = corpus.train_ids;
      std::shuffle(order.begin(), order.end(), rng);
      const int bs = sched.batch_size;
      int n_steps = (static_cast<int>(order.size()) + bs - 1) / bs;
      if (sched.max_steps_per_epoch > 0) n_steps = std::min(n_steps, sched.max_steps_per_epoch);
      order.resize(std::min(order.size(), static_cast<size_t>(n_steps) * bs));

      // Batches pad to their longest sequence, so group similar lengths
      // together; batch order is shuffled to keep optimization unbiased.
      const bool mm = model.kind == ModelKind::Multimodal;
      std::vector<data::MaskedExample> epoch_examples;
      if (model.kind == ModelKind::TextDecoder) {
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
          return corpus.games[a].moves.size() < corpus.games[b].moves.size();
        });
      } else {
        epoch_examples.reserve(order.size());
        for (int id : order) epoch_examples.push_back(sample_example(corpus, id, sched, mm, rng));
        std::stable_sort(epoch_examples.begin(), epoch_examples.end(),
                         [](const data::MaskedExample& a, const data::MaskedExample& b) {
                           return a.input_tokens.size() < b.input_tokens.size();
                         });
      }
      std::vector<int> batch_order(n_steps);
      std::iota(batch_order.begin(), batch_order.end(), 0);
      std::shuffle(batch_order.begin(), batch_order.end(), rng);

      for (int step : batch_order) {
        const size_t begin = static_cast<size_t>(step) * bs;
        const size_t end = std::min(order.size(), begin + static_cast<size_t>(bs));

        if (model.kind == ModelKind::TextDecoder) {
          std::vector<int> ids(order.begin() + begin, order.begin() + end);
          std::vector<int> targets;
          models::SeqBatch batch = build_decoder_batch(corpus, ids, targets);
          models::SeqOutput out = model.decoder->forward(batch, true, rng);
          run_batch(nn::cross_entropy(
              nn::reshape(out.logits, {batch.batch * batch.seq_len, Vocab::kSize}), targets));
          continue;
        }

        std::vector<data::MaskedExample> examples(epoch_examples.begin() + begin,
                                                  epoch_examples.begin() + end);

        if (model.kind == ModelKind::TextEncoder) {
          std::vector<int> targets;
          models::SeqBatch batch = build_seq_batch(examples, targets);
          models::SeqOutput out = model.text_encoder->forward(batch, true, rng);
          run_batch(nn::cross_entropy(
              nn::reshape(out.logits, {batch.batch * batch.seq_len, Vocab::kSize}), targets));
        } else {
          std::vector<int> targets;
          std::vector<double> labels, weights;
          models::MultimodalBatch batch =
              build_multimodal_batch(examples, *features, targets, labels, weights);
          models::MultimodalOutput out = model.multimodal->forward(batch, true, rng);
          nn::Tensor loss = nn::cross_entropy(
              nn::reshape(out.logits, {batch.batch * batch.steps, Vocab::kSize}), targets);
          if (std::any_of(weights.begin(), weights.end(), [](double w) { return w > 0; }))
            loss = nn::add(loss, nn::bce_with_logits(out.match_logit, labels, weights));
          run_batch(loss);
        }
      }
    }

    result.history.push_back(
        {epoch, "train", "loss", n_batches ? epoch_loss / n_batches : 0.0, elapsed()});
    if (std::getenv("OLAB_TRAIN_VERBOSE"))
      std::fprintf(stderr, "[train %s] epoch %d loss %.4f (%.1fs)\n", kind_name(model.kind).c_str(),
                   epoch, n_batches ? epoch_loss / n_batches : 0.0, elapsed());

    if (epoch % sched.validate_every == 0) {
      eval::EvalReport report = eval::legal_move_accuracy(model, corpus, corpus.validation_ids,
                                                          false, features);
      result.history.push_back(
          {epoch, "validation", "legal_move_accuracy", report.accuracy, elapsed()});
      if (std::getenv("OLAB_TRAIN_VERBOSE"))
        std::fprintf(stderr, "[train %s] epoch %d val %.2f%% best %.2f%% (%.1fs)\n",
                     kind_name(model.kind).c_str(), epoch, report.accuracy,
                     std::max(best_metric, report.accuracy), elapsed());
      if (report.accuracy > best_metric) {
        best_metric = report.accuracy;
        best = take_snapshot(named);
        result.meta.epoch = epoch;
        result.meta.best_metric = best_metric;
        bad_validations = 0;
      } else if (++bad_validations >= sched.patience) {
        result.converged = true;
        break;
      }
    }
  }

  if (!best.values.empty()) restore_snapshot(named, best);
  return result;
}

}  // namespace olab::train
