#include <doctest.h>

#include <random>

#include "olab/errors.hpp"
#include "olab/linalg.hpp"

using namespace olab::linalg;

namespace {

Eigen::MatrixXd random_matrix(int n, int d, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd m(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) m(i, j) = gauss(rng);
  return m;
}

Eigen::MatrixXd random_rotation(int d, uint64_t seed) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(random_matrix(d, d, seed));
  return Eigen::MatrixXd(qr.householderQ());
}

}  // namespace

TEST_CASE("svd reconstructs and orders singular values") {
  const Eigen::MatrixXd a = random_matrix(20, 8, 1);
  const Svd s = svd(a);
  CHECK((s.U * s.S.asDiagonal() * s.V.transpose() - a).norm() < 1e-10);
  for (int i = 1; i < s.S.size(); ++i) CHECK(s.S(i) <= s.S(i - 1) + 1e-12);
  CHECK((s.U.transpose() * s.U - Eigen::MatrixXd::Identity(8, 8)).norm() < 1e-10);
  CHECK((s.V.transpose() * s.V - Eigen::MatrixXd::Identity(8, 8)).norm() < 1e-10);
}

TEST_CASE("pca recovers a planted low-rank structure") {
  // points spread along two orthogonal directions with distinct variances
  const int n = 500;
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(n, 5);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    x(i, 1) = 3.0 * gauss(rng);
    x(i, 3) = 1.0 * gauss(rng);
    x.row(i).array() += 10.0;  // offset exercises centering
  }
  const PcaModel pca = pca_fit(x, 2);
  CHECK(std::abs(std::abs(pca.basis(1, 0)) - 1.0) < 0.05);
  CHECK(std::abs(std::abs(pca.basis(3, 1)) - 1.0) < 0.05);
  CHECK(pca.explained_variance(0) > pca.explained_variance(1));
  CHECK(pca.explained_variance(0) == doctest::Approx(9.0).epsilon(0.25));
  // round trip within the retained subspace
  const Eigen::MatrixXd z = pca.transform(x);
  CHECK(z.rows() == n);
  CHECK(z.cols() == 2);
  CHECK((pca.transform(pca.inverse_transform(z)) - z).norm() < 1e-8);
  CHECK_THROWS_AS(pca_fit(x, 6), olab::ShapeError);
}

TEST_CASE("procrustes recovers a planted rotation exactly") {
  const Eigen::MatrixXd a = random_matrix(300, 16, 3);
  const Eigen::MatrixXd q = random_rotation(16, 4);
  const Eigen::MatrixXd w = procrustes(a, a * q);
  CHECK((w - q).norm() < 1e-10);
  CHECK((w.transpose() * w - Eigen::MatrixXd::Identity(16, 16)).norm() < 1e-10);
}

TEST_CASE("procrustes result is orthogonal under noise") {
  const Eigen::MatrixXd a = random_matrix(200, 8, 5);
  const Eigen::MatrixXd b = a * random_rotation(8, 6) + 0.3 * random_matrix(200, 8, 7);
  const Eigen::MatrixXd w = procrustes(a, b);
  CHECK((w.transpose() * w - Eigen::MatrixXd::Identity(8, 8)).norm() < 1e-10);
}
