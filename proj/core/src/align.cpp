#include "olab/align.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <numeric>
#include <sstream>

#include "olab/errors.hpp"
#include "olab/imaging.hpp"
#include "olab/ops.hpp"
#include "olab/optim.hpp"

namespace olab::align {

namespace nn = olab::nn;
using models::Vocab;

FeatureSet extract_features(const train::AnyModel& model, const data::Corpus& corpus,
                            const std::vector<int>& game_ids, uint64_t seed,
                            train::FeatureCache* features) {
  if (model.kind == train::ModelKind::Multimodal && !features)
    throw ConfigError("extract_features: multimodal extraction needs a feature cache");

  const models::ModelConfig& cfg = model.config();
  std::mt19937_64 sample_rng(seed);
  struct Row { int game_id; int t; };
  std::vector<Row> rows;
  rows.reserve(game_ids.size());
  for (int id : game_ids) {
    const int len = static_cast<int>(corpus.games[id].moves.size());
    std::uniform_int_distribution<int> pick(1, len);
    rows.push_back({id, pick(sample_rng)});
  }

  FeatureSet set;
  set.model_id = train::kind_name(model.kind);
  const int dim = model.kind == train::ModelKind::Vision ? cfg.d_v : cfg.d_model;
  set.layer_tag = model.kind == train::ModelKind::Vision ? "conv" : "layer" + std::to_string(cfg.n_layers);
  set.matrix.resize(static_cast<Eigen::Index>(rows.size()), dim);
  set.sequence_ids.reserve(rows.size());
  for (const Row& r : rows) set.sequence_ids.push_back(r.game_id);

  nn::NoGradGuard guard;
  std::mt19937_64 rng(0);
  const size_t chunk = 64;
  for (size_t begin = 0; begin < rows.size(); begin += chunk) {
    const size_t end = std::min(rows.size(), begin + chunk);
    const int B = static_cast<int>(end - begin);

    if (model.kind == train::ModelKind::Vision) {
      // the board reached after the prefix
      std::vector<engine::Board> boards;
      for (size_t i = begin; i < end; ++i) {
        engine::GameRecord prefix;
        prefix.moves.assign(corpus.games[rows[i].game_id].moves.begin(),
                            corpus.games[rows[i].game_id].moves.begin() + rows[i].t);
        boards.push_back(engine::final_board(prefix));
      }
      std::vector<double> vals = train::conv_featurizer(model.vision).batch(boards);
      for (int b = 0; b < B; ++b)
        for (int j = 0; j < dim; ++j)
          set.matrix(begin + b, j) = vals[static_cast<size_t>(b) * dim + j];
      continue;
    }

    int max_t = 0;
    for (size_t i = begin; i < end; ++i) max_t = std::max(max_t, rows[i].t);
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
        const Row& r = rows[begin + b];
        const auto& moves = corpus.games[r.game_id].moves;
        const auto& feats = features->game_features(r.game_id);
        const size_t base = static_cast<size_t>(b) * max_t;
        for (int i = 0; i < r.t; ++i) {
          batch.move_tokens[base + i] = moves[i].index;
          batch.text_visible[base + i] = 1;
          batch.image_visible[base + i] = 1;
        }
        std::copy_n(feats.data(), static_cast<size_t>(r.t) * d_in,
                    batch.visual.data() + base * d_in);
        read_pos[b] = models::MultimodalEncoder::text_position(max_t, r.t - 1);
      }
      hidden = model.multimodal->forward(batch, false, rng).hidden;
    } else {
      models::SeqBatch batch;
      batch.batch = B;
      batch.seq_len = 1 + max_t;
      batch.tokens.assign(static_cast<size_t>(B) * batch.seq_len, Vocab::kPad);
      batch.key_visible.assign(batch.tokens.size(), 0);
      for (int b = 0; b < B; ++b) {
        const Row& r = rows[begin + b];
        const auto& moves = corpus.games[r.game_id].moves;
        const size_t base = static_cast<size_t>(b) * batch.seq_len;
        batch.tokens[base] = Vocab::kCls;
        batch.key_visible[base] = 1;
        for (int i = 0; i < r.t; ++i) {
          batch.tokens[base + 1 + i] = moves[i].index;
          batch.key_visible[base + 1 + i] = 1;
        }
        read_pos[b] = r.t;
      }
      hidden = model.kind == train::ModelKind::TextDecoder
                   ? model.decoder->forward(batch, false, rng).hidden
                   : model.text_encoder->forward(batch, false, rng).hidden;
    }

    for (int b = 0; b < B; ++b) {
      std::vector<double> act = hidden.at(cfg.n_layers, b, read_pos[b]);
      for (int j = 0; j < dim; ++j) set.matrix(begin + b, j) = act[j];
    }
  }
  return set;
}

namespace {

void write_str(std::FILE* f, const std::string& s) {
  const uint32_t n = static_cast<uint32_t>(s.size());
  std::fwrite(&n, sizeof n, 1, f);
  std::fwrite(s.data(), 1, n, f);
}

std::string read_str(std::FILE* f) {
  uint32_t n = 0;
  if (std::fread(&n, sizeof n, 1, f) != 1) throw DataError("feature set: truncated");
  std::string s(n, '\0');
  if (n && std::fread(s.data(), 1, n, f) != n) throw DataError("feature set: truncated");
  return s;
}

}  // namespace

void save_feature_set(const std::string& path, const FeatureSet& set) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw DataError("save_feature_set: cannot open " + path);
  std::fwrite("OLABFEAT", 1, 8, f);
  const uint32_t version = 1;
  std::fwrite(&version, sizeof version, 1, f);
  write_str(f, set.model_id);
  write_str(f, set.layer_tag);
  const uint32_t n = static_cast<uint32_t>(set.matrix.rows());
  const uint32_t d = static_cast<uint32_t>(set.matrix.cols());
  std::fwrite(&n, sizeof n, 1, f);
  std::fwrite(&d, sizeof d, 1, f);
  for (uint32_t i = 0; i < n; ++i)
    for (uint32_t j = 0; j < d; ++j) {
      const float v = static_cast<float>(set.matrix(i, j));
      std::fwrite(&v, sizeof v, 1, f);
    }
  for (int id : set.sequence_ids) {
    const int32_t v = id;
    std::fwrite(&v, sizeof v, 1, f);
  }
  std::fclose(f);
}

FeatureSet load_feature_set(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw DataError("load_feature_set: cannot open " + path);
  char magic[8];
  if (std::fread(magic, 1, 8, f) != 8 || std::string(magic, 8) != "OLABFEAT") {
    std::fclose(f);
    throw DataError("load_feature_set: bad magic");
  }
  uint32_t version = 0;
  std::fread(&version, sizeof version, 1, f);
  if (version != 1) {
    std::fclose(f);
    throw DataError("load_feature_set: unsupported version");
  }
  FeatureSet set;
  try {
    set.model_id = read_str(f);
    set.layer_tag = read_str(f);
    uint32_t n = 0, d = 0;
    if (std::fread(&n, sizeof n, 1, f) != 1 || std::fread(&d, sizeof d, 1, f) != 1)
      throw DataError("load_feature_set: truncated");
    set.matrix.resize(n, d);
    for (uint32_t i = 0; i < n; ++i)
      for (uint32_t j = 0; j < d; ++j) {
        float v = 0;
        if (std::fread(&v, sizeof v, 1, f) != 1) throw DataError("load_feature_set: truncated");
        set.matrix(i, j) = v;
      }
    set.sequence_ids.resize(n);
    for (uint32_t i = 0; i < n; ++i) {
      int32_t v = 0;
      if (std::fread(&v, sizeof v, 1, f) != 1) throw DataError("load_feature_set: truncated");
      set.sequence_ids[i] = v;
    }
  } catch (...) {
    std::fclose(f);
    throw;
  }
  std::fclose(f);
  return set;
}

SharedProjection project_to_shared(const Eigen::MatrixXd& a_train,
                                   const Eigen::MatrixXd& b_train) {
  SharedProjection proj;
  proj.dim = static_cast<int>(std::min(a_train.cols(), b_train.cols()));
  proj.a = linalg::pca_fit(a_train, proj.dim);
  proj.b = linalg::pca_fit(b_train, proj.dim);
  return proj;
}

double AlignmentMap::orthogonality_error() const {
  const Eigen::MatrixXd g = w.transpose() * w;
  return (g - Eigen::MatrixXd::Identity(g.rows(), g.cols())).norm();
}

namespace {

Eigen::MatrixXd row_normalized(const Eigen::MatrixXd& x) {
  Eigen::MatrixXd out = x;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double n = out.row(i).norm();
    if (n > 1e-12) out.row(i) /= n;
  }
  return out;
}

double paired_mean_cosine(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  double total = 0.0;
  Eigen::Index n = 0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double na = a.row(i).norm(), nb = b.row(i).norm();
    if (na < 1e-12 || nb < 1e-12) continue;
    total += a.row(i).dot(b.row(i)) / (na * nb);
    ++n;
  }
  return n ? total / n : 0.0;
}

struct MnnPairs {
  std::vector<int> src, tgt;
  double mean_cosine = 0.0;
};

MnnPairs mutual_nearest_neighbours(const Eigen::MatrixXd& mapped, const Eigen::MatrixXd& tgt) {
  const Eigen::MatrixXd a = row_normalized(mapped);
  const Eigen::MatrixXd b = row_normalized(tgt);
  const Eigen::MatrixXd sim = a * b.transpose();
  std::vector<int> best_for_src(sim.rows()), best_for_tgt(sim.cols());
  for (Eigen::Index i = 0; i < sim.rows(); ++i) sim.row(i).maxCoeff(&best_for_src[i]);
  for (Eigen::Index j = 0; j < sim.cols(); ++j) sim.col(j).maxCoeff(&best_for_tgt[j]);
  MnnPairs pairs;
  double total = 0.0;
  for (Eigen::Index i = 0; i < sim.rows(); ++i) {
    const int j = best_for_src[i];
    if (best_for_tgt[j] == static_cast<int>(i)) {
      pairs.src.push_back(static_cast<int>(i));
      pairs.tgt.push_back(j);
      total += sim(i, j);
    }
  }
  pairs.mean_cosine = pairs.src.empty() ? 0.0 : total / pairs.src.size();
  return pairs;
}

Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& x, const std::vector<int>& idx) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (size_t i = 0; i < idx.size(); ++i) out.row(i) = x.row(idx[i]);
  return out;
}

// two-hidden-layer MLP discriminator in the autograd graph
struct Discriminator {
  nn::Tensor w1, b1, w2, b2, w3, b3;

  Discriminator(int d, std::mt19937_64& rng) {
    w1 = nn::Tensor::truncated_normal({d, 512}, std::sqrt(2.0 / d), rng, true);
    b1 = nn::Tensor::zeros({1, 512}, true);
    w2 = nn::Tensor::truncated_normal({512, 512}, std::sqrt(2.0 / 512), rng, true);
    b2 = nn::Tensor::zeros({1, 512}, true);
    w3 = nn::Tensor::truncated_normal({512, 1}, std::sqrt(2.0 / 512), rng, true);
    b3 = nn::Tensor::zeros({1, 1}, true);
  }

  nn::Tensor forward(const nn::Tensor& x) const {
    nn::Tensor h = nn::relu(nn::add(nn::matmul(x, w1), b1));
    h = nn::relu(nn::add(nn::matmul(h, w2), b2));
    const int n = h.shape()[0];
    return nn::reshape(nn::add(nn::matmul(h, w3), b3), {n});
  }

  std::vector<nn::Tensor> params() const { return {w1, b1, w2, b2, w3, b3}; }
};

nn::Tensor eigen_to_tensor(const Eigen::MatrixXd& x) {
  std::vector<double> v(static_cast<size_t>(x.rows()) * x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      v[static_cast<size_t>(i) * x.cols() + j] = x(i, j);
  return nn::Tensor({static_cast<int>(x.rows()), static_cast<int>(x.cols())}, std::move(v));
}

Eigen::MatrixXd tensor_to_eigen(const nn::Tensor& t) {
  const auto& shape = t.shape();
  Eigen::MatrixXd out(shape[0], shape[1]);
  const auto& v = t.values();
  for (int i = 0; i < shape[0]; ++i)
    for (int j = 0; j < shape[1]; ++j) out(i, j) = v[static_cast<size_t>(i) * shape[1] + j];
  return out;
}

// Initial map from second- and third-moment matching: align the PCA bases of
// the two clouds and resolve each axis's sign ambiguity by the sign of its
// skewness. Exact for identifiable (non-symmetric) clouds; a strong starting
// point otherwise.
Eigen::MatrixXd spectral_init(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  auto eig = [](const Eigen::MatrixXd& m) {
    const Eigen::MatrixXd c = m.rowwise() - m.colwise().mean();
    return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(c.transpose() * c /
                                                          std::max<Eigen::Index>(1, m.rows() - 1));
  };
  const auto ex = eig(x);
  const auto ey = eig(y);
  const Eigen::MatrixXd px = (x.rowwise() - x.colwise().mean()) * ex.eigenvectors();
  const Eigen::MatrixXd py = (y.rowwise() - y.colwise().mean()) * ey.eigenvectors();
  auto skew = [](const Eigen::VectorXd& z) {
    const double mu = z.mean();
    double s3 = 0.0;
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      const double c = z(i) - mu;
      s3 += c * c * c;
    }
    return s3;
  };
  const int d = static_cast<int>(x.cols());
  Eigen::VectorXd s(d);
  for (int j = 0; j < d; ++j)
    s(j) = (skew(px.col(j)) >= 0.0) == (skew(py.col(j)) >= 0.0) ? 1.0 : -1.0;
  return ex.eigenvectors() * s.asDiagonal() * ey.eigenvectors().transpose();
}

Eigen::MatrixXd random_orthogonal(int d, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd g(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) g(i, j) = gauss(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ();
  return q;
}

AlignmentMap refine_with_mnn(Eigen::MatrixXd w, const Eigen::MatrixXd& src,
                             const Eigen::MatrixXd& tgt, int iters, const std::string& mode) {
  AlignmentMap best;
  best.w = w;
  best.mode = mode;
  best.train_objective = mutual_nearest_neighbours(src * w, tgt).mean_cosine;
  for (int it = 0; it < iters; ++it) {
    MnnPairs pairs = mutual_nearest_neighbours(src * w, tgt);
    if (pairs.src.size() < 3) break;
    w = linalg::procrustes(gather_rows(src, pairs.src), gather_rows(tgt, pairs.tgt));
    const double objective = mutual_nearest_neighbours(src * w, tgt).mean_cosine;
    if (objective > best.train_objective) {
      best.w = w;
      best.train_objective = objective;
    }
  }
  return best;
}

}  // namespace

AlignmentMap align_supervised(const Eigen::MatrixXd& src, const Eigen::MatrixXd& tgt,
                              int refine_iters) {
  if (src.rows() != tgt.rows() || src.cols() != tgt.cols())
    throw ShapeError("align_supervised: paired sets must have matching shapes");
  AlignmentMap best;
  best.mode = "supervised";
  best.w = linalg::procrustes(src, tgt);
  best.train_objective = paired_mean_cosine(src * best.w, tgt);
  Eigen::MatrixXd w = best.w;
  for (int it = 0; it < refine_iters; ++it) {
    MnnPairs pairs = mutual_nearest_neighbours(src * w, tgt);
    if (pairs.src.size() < 3) break;
    w = linalg::procrustes(gather_rows(src, pairs.src), gather_rows(tgt, pairs.tgt));
    const double objective = paired_mean_cosine(src * w, tgt);
    if (objective > best.train_objective) {
      best.w = w;
      best.train_objective = objective;
    }
  }
  return best;
}

AlignmentMap align_unsupervised(const Eigen::MatrixXd& src, const Eigen::MatrixXd& tgt,
                                uint64_t seed, const UnsupervisedOptions& opts) {
  if (src.cols() != tgt.cols())
    throw ShapeError("align_unsupervised: sets must share the projected width");
  const int d = static_cast<int>(src.cols());
  const Eigen::MatrixXd xn = row_normalized(src);
  const Eigen::MatrixXd yn = row_normalized(tgt);

  AlignmentMap overall;
  overall.mode = "unsupervised";
  overall.train_objective = -1.0;
  bool found = false;

  for (int attempt = 0; attempt <= opts.retries; ++attempt) {
    std::mt19937_64 rng(seed + 1000003ull * attempt);
    Eigen::MatrixXd w = attempt == 0 ? spectral_init(xn, yn) : random_orthogonal(d, rng);
    Discriminator disc(d, rng);
    nn::Adam disc_opt(disc.params(), opts.disc_lr);
    nn::Tensor wt = eigen_to_tensor(w);
    wt.node()->requires_grad = true;

    std::uniform_int_distribution<int> pick_src(0, static_cast<int>(xn.rows()) - 1);
    std::uniform_int_distribution<int> pick_tgt(0, static_cast<int>(yn.rows()) - 1);
    auto sample = [&](const Eigen::MatrixXd& m, auto& pick) {
      Eigen::MatrixXd out(opts.batch_size, d);
      for (int i = 0; i < opts.batch_size; ++i) out.row(i) = m.row(pick(rng));
      return out;
    };

    double best_criterion = mutual_nearest_neighbours(xn * w, yn).mean_cosine;
    Eigen::MatrixXd best_w = w;
    bool diverged = false;

    for (int epoch = 0; epoch < opts.adv_epochs && !diverged && best_criterion < 0.995; ++epoch) {
      double disc_loss_sum = 0.0, map_loss_sum = 0.0;
      int disc_n = 0, map_n = 0;
      for (int step = 0; step < opts.steps_per_epoch; ++step) {
        // discriminator: 1 = real target row, 0 = mapped source row
        for (int k = 0; k < opts.disc_steps; ++k) {
          const Eigen::MatrixXd xb = sample(xn, pick_src);
          const Eigen::MatrixXd yb = sample(yn, pick_tgt);
          const Eigen::MatrixXd mapped = xb * tensor_to_eigen(wt);
          Eigen::MatrixXd input(2 * opts.batch_size, d);
          input.topRows(opts.batch_size) = mapped;
          input.bottomRows(opts.batch_size) = yb;
          std::vector<double> labels(2 * opts.batch_size, opts.smoothing);
          for (int i = opts.batch_size; i < 2 * opts.batch_size; ++i)
            labels[i] = 1.0 - opts.smoothing;
          nn::Tensor loss = nn::bce_with_logits(disc.forward(eigen_to_tensor(input)), labels);
          if (!std::isfinite(loss.item())) { diverged = true; break; }
          disc_loss_sum += loss.item();
          ++disc_n;
          disc_opt.zero_grad();
          loss.backward();
          disc_opt.step();
        }
        if (diverged) break;

        // mapping: fool the discriminator into calling mapped rows targets
        const Eigen::MatrixXd xb = sample(xn, pick_src);
        nn::Tensor mapped = nn::matmul(eigen_to_tensor(xb), wt);
        std::vector<double> labels(opts.batch_size, 1.0 - opts.smoothing);
        nn::Tensor loss = nn::bce_with_logits(disc.forward(mapped), labels);
        if (!std::isfinite(loss.item())) { diverged = true; break; }
        map_loss_sum += loss.item();
        ++map_n;
        wt.node()->ensure_grad();
        std::fill(wt.node()->grad.begin(), wt.node()->grad.end(), 0.0);
        for (auto& p : disc.params()) {
          p.node()->ensure_grad();
          std::fill(p.node()->grad.begin(), p.node()->grad.end(), 0.0);
        }
        loss.backward();
        // plain SGD on the map (Adam momentum fights the orthogonalization below)
        {
          auto& v = wt.mutable_values();
          const auto& g = wt.node()->grad;
          for (size_t i = 0; i < v.size(); ++i) v[i] -= opts.map_lr * g[i];
        }
        for (auto& p : disc.params()) std::fill(p.node()->grad.begin(), p.node()->grad.end(), 0.0);

        // keep W near the orthogonal manifold
        Eigen::MatrixXd wm = tensor_to_eigen(wt);
        wm = (1.0 + opts.beta) * wm - opts.beta * wm * wm.transpose() * wm;
        if (!wm.allFinite()) { diverged = true; break; }
        nn::Tensor fresh = eigen_to_tensor(wm);
        wt.mutable_values() = fresh.values();
      }
      if (diverged) break;
      const double criterion =
          mutual_nearest_neighbours(xn * tensor_to_eigen(wt), yn).mean_cosine;
      if (std::getenv("OLAB_ALIGN_VERBOSE"))
        std::fprintf(stderr, "  attempt %d epoch %d criterion %.4f disc %.4f map %.4f\n", attempt,
                     epoch, criterion, disc_n ? disc_loss_sum / disc_n : 0.0,
                     map_n ? map_loss_sum / map_n : 0.0);
      if (criterion > best_criterion) {
        best_criterion = criterion;
        best_w = tensor_to_eigen(wt);
      }
      if (best_criterion >= 0.995) break;  // already locked in
    }

    if (diverged || best_criterion <= 0.0) continue;  // fresh seed

    // snap to an exactly-orthogonal map, then MNN Procrustes refinement
    {
      linalg::Svd s = linalg::svd(best_w);
      best_w = s.U * s.V.transpose();
    }
    AlignmentMap map = refine_with_mnn(best_w, xn, yn, opts.refine_iters, "unsupervised");
    if (std::isfinite(map.train_objective) && map.train_objective > overall.train_objective) {
      overall = map;
      found = true;
    }
    if (found && overall.train_objective >= 0.99) break;  // no better attempt likely
  }
  if (found && overall.train_objective > 0.0) return overall;
  throw AlignmentError("align_unsupervised: failed to converge after retries");
}

double eval_alignment(const AlignmentMap& map, const Eigen::MatrixXd& src_test,
                      const Eigen::MatrixXd& tgt_test) {
  if (src_test.rows() != tgt_test.rows())
    throw ShapeError("eval_alignment: paired sets must have matching row counts");
  return paired_mean_cosine(src_test * map.w, tgt_test);
}

std::string AlignmentReport::to_json() const {
  std::ostringstream os;
  os << "{\"source_id\": \"" << source_id << "\", \"target_id\": \"" << target_id
     << "\", \"mode\": \"" << mode << "\", \"shared_dim\": " << shared_dim
     << ", \"n_train\": " << n_train << ", \"n_test\": " << n_test
     << ", \"mean_cosine\": " << mean_cosine
     << ", \"orthogonality_error\": " << orthogonality_error << "}";
  return os.str();
}

}  // namespace olab::align
