#include "olab/eval.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <sstream>

#include "olab/errors.hpp"
#include "olab/imaging.hpp"

namespace olab::eval {

namespace nn = olab::nn;
using models::Vocab;

engine::GameRecord rotate_record(const engine::GameRecord& record) {
  engine::GameRecord out;
  out.moves.reserve(record.moves.size());
  for (engine::Square s : record.moves) out.moves.push_back(engine::rotate_square(s));
  return out;
}

double random_predictor_floor(const data::Corpus& corpus, const std::vector<int>& game_ids) {
  double total = 0.0;
  long long n = 0;
  for (int id : game_ids) {
    for (const engine::Board& b : engine::replay(corpus.games[id])) {
      total += std::popcount(engine::legal_move_mask(b)) / 64.0;
      ++n;
    }
  }
  if (n == 0) throw DataError("random_predictor_floor: no positions");
  return 100.0 * total / n;
}

namespace {

struct Task {
  const engine::GameRecord* record = nullptr;
  const engine::Board* board = nullptr;   // b_t, the position predicted from
  const std::vector<double>* features = nullptr;  // game features, multimodal only
  int t = 0;  // 1-based step
};

// argmax over the move-token slice of one logits row
int argmax_move(const double* row) {
  int best = 0;
  for (int i = 1; i < 64; ++i)
    if (row[i] > row[best]) best = i;
  return best;
}

std::vector<int> predict_batch(const train::AnyModel& model, const std::vector<Task>& tasks,
                               int d_in, const imaging::RenderSpec& spec) {
  nn::NoGradGuard guard;
  std::mt19937_64 rng(0);
  const int B = static_cast<int>(tasks.size());
  std::vector<int> picks(B);

  if (model.kind == train::ModelKind::Vision) {
    const int side = spec.image_side;
    std::vector<double> pixels(static_cast<size_t>(B) * 3 * side * side);
    for (int b = 0; b < B; ++b) {
      imaging::BoardImage img = imaging::render(*tasks[b].board, spec);
      double* dst = pixels.data() + static_cast<size_t>(b) * 3 * side * side;
      for (int ch = 0; ch < 3; ++ch)
        for (int p = 0; p < side * side; ++p)
          dst[ch * side * side + p] = img.pixels[p * 3 + ch] / 255.0;
    }
    nn::Tensor images({B, 3, side, side}, std::move(pixels));
    nn::Tensor logits = model.vision->next_move_logits(model.vision->encode(images, false, rng));
    const auto& vals = logits.values();
    for (int b = 0; b < B; ++b) picks[b] = argmax_move(vals.data() + static_cast<size_t>(b) * 64);
    return picks;
  }

  int max_t = 0;
  for (const Task& task : tasks) max_t = std::max(max_t, task.t);

  if (model.kind == train::ModelKind::Multimodal) {
    models::MultimodalBatch batch;
    batch.batch = B;
    batch.steps = max_t;
    batch.move_tokens.assign(static_cast<size_t>(B) * max_t, Vocab::kPad);
    batch.visual.assign(static_cast<size_t>(B) * max_t * d_in, 0.0);
    batch.text_visible.assign(static_cast<size_t>(B) * max_t, 0);
    batch.image_visible.assign(batch.text_visible.size(), 0);
    for (int b = 0; b < B; ++b) {
      const Task& task = tasks[b];
      const size_t base = static_cast<size_t>(b) * max_t;
      for (int i = 0; i < task.t - 1; ++i) {
        batch.move_tokens[base + i] = task.record->moves[i].index;
        batch.text_visible[base + i] = 1;
      }
      batch.move_tokens[base + task.t - 1] = Vocab::kMask;
      for (int i = 0; i < task.t; ++i) batch.image_visible[base + i] = 1;
      std::copy_n(task.features->data(), static_cast<size_t>(task.t) * d_in,
                  batch.visual.data() + base * d_in);
    }
    models::MultimodalOutput out = model.multimodal->forward(batch, false, rng);
    const auto& vals = out.logits.values();
    for (int b = 0; b < B; ++b) {
      const double* row =
          vals.data() + (static_cast<size_t>(b) * max_t + tasks[b].t - 1) * Vocab::kSize;
      picks[b] = argmax_move(row);
    }
    return picks;
  }

  const bool decoder = model.kind == train::ModelKind::TextDecoder;
  models::SeqBatch batch;
  batch.batch = B;
  batch.seq_len = decoder ? max_t : max_t + 1;
  batch.tokens.assign(static_cast<size_t>(B) * batch.seq_len, Vocab::kPad);
  batch.key_visible.assign(batch.tokens.size(), 0);
  for (int b = 0; b < B; ++b) {
    const Task& task = tasks[b];
    const size_t base = static_cast<size_t>(b) * batch.seq_len;
    batch.tokens[base] = Vocab::kCls;
    batch.key_visible[base] = 1;
    for (int i = 0; i < task.t - 1; ++i) {
      batch.tokens[base + 1 + i] = task.record->moves[i].index;
      batch.key_visible[base + 1 + i] = 1;
    }
    if (!decoder) batch.tokens[base + task.t] = Vocab::kMask;  // invisible query slot
  }
  models::SeqOutput out = decoder ? model.decoder->forward(batch, false, rng)
                                  : model.text_encoder->forward(batch, false, rng);
  const auto& vals = out.logits.values();
  for (int b = 0; b < B; ++b) {
    const int pos = decoder ? tasks[b].t - 1 : tasks[b].t;
    const double* row =
        vals.data() + (static_cast<size_t>(b) * batch.seq_len + pos) * Vocab::kSize;
    picks[b] = argmax_move(row);
  }
  return picks;
}

}  // namespace

EvalReport legal_move_accuracy(const train::AnyModel& model, const data::Corpus& corpus,
                               const std::vector<int>& game_ids, bool rotated,
                               train::FeatureCache* features, int batch_size,
                               const std::string& dataset_id) {
  if (model.kind == train::ModelKind::Multimodal && !features)
    throw ConfigError("legal_move_accuracy: multimodal evaluation needs a feature cache");

  imaging::RenderSpec spec;
  spec.image_side = model.config().image_side;
  spec.validate();
  const int d_in =
      model.kind == train::ModelKind::Multimodal ? features->featurizer().dim : 0;

  // Materialize records/replays (rotated variants live here too).
  std::vector<engine::GameRecord> records;
  std::vector<std::vector<engine::Board>> boards;
  std::vector<std::vector<double>> rotated_features;
  records.reserve(game_ids.size());
  for (size_t g = 0; g < game_ids.size(); ++g) {
    const engine::GameRecord& original = corpus.games[game_ids[g]];
    records.push_back(rotated ? rotate_record(original) : original);
    boards.push_back(engine::replay(records.back()));
    if (model.kind == train::ModelKind::Multimodal) {
      if (rotated)
        rotated_features.push_back(features->featurizer().batch(boards.back()));
      else
        rotated_features.push_back(features->game_features(game_ids[g]));
    }
  }

  EvalReport report;
  report.condition = rotated ? "rotated" : "original";
  report.dataset_id = dataset_id;
  report.model_id = train::kind_name(model.kind);

  std::vector<Task> tasks;
  int max_step = 0;
  for (size_t g = 0; g < records.size(); ++g) {
    for (int t = 1; t <= static_cast<int>(records[g].moves.size()); ++t) {
      Task task;
      task.record = &records[g];
      task.board = &boards[g][t - 1];
      if (model.kind == train::ModelKind::Multimodal) task.features = &rotated_features[g];
      task.t = t;
      tasks.push_back(task);
      max_step = std::max(max_step, t);
    }
  }
  report.by_step.resize(max_step);
  for (int t = 1; t <= max_step; ++t) report.by_step[t - 1].step = t;

  // batches pad to their longest prefix, so group similar lengths together
  std::stable_sort(tasks.begin(), tasks.end(),
                   [](const Task& a, const Task& b) { return a.t < b.t; });

  for (size_t begin = 0; begin < tasks.size(); begin += batch_size) {
    const size_t end = std::min(tasks.size(), begin + batch_size);
    std::vector<Task> chunk(tasks.begin() + begin, tasks.begin() + end);
    std::vector<int> picks = predict_batch(model, chunk, d_in, spec);
    for (size_t i = 0; i < chunk.size(); ++i) {
      const uint64_t legal = engine::legal_move_mask(*chunk[i].board);
      const bool ok = (legal >> picks[i]) & 1ull;
      ++report.n_positions;
      report.n_legal += ok;
      StepAccuracy& sa = report.by_step[chunk[i].t - 1];
      ++sa.total;
      sa.legal += ok;
    }
  }
  report.accuracy = report.n_positions ? 100.0 * report.n_legal / report.n_positions : 0.0;
  return report;
}

std::string EvalReport::to_json() const {
  std::ostringstream os;
  os << "{\n"
     << "  \"model_id\": \"" << model_id << "\",\n"
     << "  \"dataset_id\": \"" << dataset_id << "\",\n"
     << "  \"condition\": \"" << condition << "\",\n"
     << "  \"n_positions\": " << n_positions << ",\n"
     << "  \"n_legal\": " << n_legal << ",\n"
     << "  \"accuracy\": " << accuracy << ",\n"
     << "  \"by_step\": [";
  for (size_t i = 0; i < by_step.size(); ++i) {
    if (i) os << ", ";
    os << "{\"step\": " << by_step[i].step << ", \"total\": " << by_step[i].total
       << ", \"legal\": " << by_step[i].legal << "}";
  }
  os << "]\n}\n";
  return os.str();
}

}  // namespace olab::eval
