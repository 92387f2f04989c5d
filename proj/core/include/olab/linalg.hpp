#pragma once

#include <Eigen/Dense>

namespace olab::linalg {

struct Svd {
  Eigen::MatrixXd U;   // orthonormal columns
  Eigen::VectorXd S;   // non-negative, descending
  Eigen::MatrixXd V;   // orthonormal columns; A = U * S.asDiagonal() * V^T
};

// Thin SVD; throws NumericalError if the decomposition does not satisfy the
// reconstruction tolerance.
Svd svd(const Eigen::MatrixXd& a);

struct PcaModel {
  Eigen::VectorXd mean;                 // (d)
  Eigen::MatrixXd basis;                // (d, k), orthonormal columns
  Eigen::VectorXd explained_variance;   // (k), descending

  // (N, d) -> (N, k)
  Eigen::MatrixXd transform(const Eigen::MatrixXd& x) const;
  // (N, k) -> (N, d)
  Eigen::MatrixXd inverse_transform(const Eigen::MatrixXd& z) const;
};

// Mean-centered principal directions from SVD. Throws ShapeError when
// k > min(N, d).
PcaModel pca_fit(const Eigen::MatrixXd& x, int k);

// Orthogonal W minimizing ||A W - B||_F over paired rows.
Eigen::MatrixXd procrustes(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

}  // namespace olab::linalg
