#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "olab/data.hpp"
#include "olab/linalg.hpp"
#include "olab/train.hpp"

namespace olab::align {

// Final-layer activation at the last move token of one seeded prefix per
// game; row i of two sets extracted with the same seed describes the same
// prefix of the same game.
struct FeatureSet {
  std::string model_id;
  std::string layer_tag;          // e.g. "layer4"
  std::vector<int> sequence_ids;  // game ids, row-aligned
  Eigen::MatrixXd matrix;         // (n, d)
};

FeatureSet extract_features(const train::AnyModel& model, const data::Corpus& corpus,
                            const std::vector<int>& game_ids, uint64_t seed,
                            train::FeatureCache* features = nullptr);

void save_feature_set(const std::string& path, const FeatureSet& set);  // f32 rows on disk
FeatureSet load_feature_set(const std::string& path);

// Per-set PCA to the shared width min(d1, d2), fit on the train rows only.
struct SharedProjection {
  linalg::PcaModel a, b;
  int dim = 0;
};

SharedProjection project_to_shared(const Eigen::MatrixXd& a_train, const Eigen::MatrixXd& b_train);

struct AlignmentMap {
  Eigen::MatrixXd w;  // (d, d), orthogonal
  std::string mode;   // "supervised" or "unsupervised"
  double train_objective = 0.0;  // mean cosine on the rows it was fit on

  double orthogonality_error() const;  // ||W^T W - I||_F
};

// Procrustes on paired rows plus a few mutual-nearest-neighbour refinement
// rounds; keeps the best map by train objective.
AlignmentMap align_supervised(const Eigen::MatrixXd& src, const Eigen::MatrixXd& tgt,
                              int refine_iters = 5);

struct UnsupervisedOptions {
  int adv_epochs = 40;
  int steps_per_epoch = 60;
  int batch_size = 128;
  int disc_steps = 5;        // discriminator updates per mapping update
  double disc_lr = 1e-3;
  double map_lr = 1e-3;
  double beta = 0.01;        // orthogonalization strength
  double smoothing = 0.1;    // discriminator label smoothing
  int refine_iters = 10;
  int retries = 3;           // fresh-seed restarts before AlignmentError
};

// Adversarial rotation fit (no paired rows used) followed by MNN Procrustes
// refinement; model selection by the unsupervised MNN-cosine criterion.
AlignmentMap align_unsupervised(const Eigen::MatrixXd& src, const Eigen::MatrixXd& tgt,
                                uint64_t seed, const UnsupervisedOptions& opts = {});

// Mean cosine between mapped source rows and their paired target rows.
double eval_alignment(const AlignmentMap& map, const Eigen::MatrixXd& src_test,
                      const Eigen::MatrixXd& tgt_test);

struct AlignmentReport {
  std::string source_id, target_id;
  std::string mode;
  int shared_dim = 0;
  int n_train = 0, n_test = 0;
  double mean_cosine = 0.0;
  double orthogonality_error = 0.0;

  std::string to_json() const;
};

}  // namespace olab::align
