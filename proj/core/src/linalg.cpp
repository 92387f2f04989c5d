#include "olab/linalg.hpp"

#include "olab/errors.hpp"

namespace olab::linalg {

Svd svd(const Eigen::MatrixXd& a) {
  if (!a.allFinite()) throw NumericalError("svd: input contains NaN/Inf");
  Eigen::BDCSVD<Eigen::MatrixXd> solver(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Svd out{solver.matrixU(), solver.singularValues(), solver.matrixV()};
  const double norm = a.norm();
  const double resid = (a - out.U * out.S.asDiagonal() * out.V.transpose()).norm();
  if (norm > 0 && resid / norm > 1e-8) {
    throw NumericalError("svd: reconstruction residual " + std::to_string(resid / norm));
  }
  return out;
}

Eigen::MatrixXd PcaModel::transform(const Eigen::MatrixXd& x) const {
  if (x.cols() != mean.size()) throw ShapeError("pca transform: dimension mismatch");
  return (x.rowwise() - mean.transpose()) * basis;
}

Eigen::MatrixXd PcaModel::inverse_transform(const Eigen::MatrixXd& z) const {
  if (z.cols() != basis.cols()) throw ShapeError("pca inverse_transform: dimension mismatch");
  return (z * basis.transpose()).rowwise() + mean.transpose();
}

PcaModel pca_fit(const Eigen::MatrixXd& x, int k) {
  const int n = static_cast<int>(x.rows()), d = static_cast<int>(x.cols());
  if (k < 1 || k > std::min(n, d)) {
    throw ShapeError("pca_fit: k = " + std::to_string(k) + " exceeds min(N, d) = " +
                     std::to_string(std::min(n, d)));
  }
  PcaModel model;
  model.mean = x.colwise().mean();
  Eigen::MatrixXd centered = x.rowwise() - model.mean.transpose();
  Svd dec = svd(centered);
  model.basis = dec.V.leftCols(k);
  model.explained_variance =
      dec.S.head(k).array().square() / std::max(1, n - 1);
  return model;
}

Eigen::MatrixXd procrustes(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("procrustes: paired matrices must have identical shapes");
  }
  // min ||A W - B|| over orthogonal W has the closed form W = U V^T from
  // SVD(A^T B).
  Svd dec = svd(a.transpose() * b);
  return dec.U * dec.V.transpose();
}

}  // namespace olab::linalg
