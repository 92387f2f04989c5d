#include <doctest.h>

#include <cmath>
#include <random>

#include "olab/errors.hpp"
#include "olab/ops.hpp"
#include "olab/optim.hpp"
#include "olab/tensor.hpp"

using namespace olab::nn;

namespace {

Tensor randn(Shape shape, std::mt19937_64& rng, bool requires_grad = true) {
  return Tensor::truncated_normal(std::move(shape), 1.0, rng, requires_grad);
}

constexpr double kTol = 1e-4;

}  // namespace

TEST_CASE("shape bookkeeping and scalar backward contract") {
  Tensor t = Tensor::zeros({2, 3});
  CHECK(t.values().size() == 6);
  CHECK_THROWS_AS(Tensor::zeros({2, 3}, true).backward(), olab::ContractError);
  CHECK_THROWS_AS(Tensor({2}, {1.0}), olab::ShapeError);
}

TEST_CASE("simple chain: d(sum(x*x))/dx = 2x") {
  Tensor x({3}, {1.0, -2.0, 3.0}, true);
  sum(mul(x, x)).backward();
  CHECK(x.grad()[0] == doctest::Approx(2.0));
  CHECK(x.grad()[1] == doctest::Approx(-4.0));
  CHECK(x.grad()[2] == doctest::Approx(6.0));
}

TEST_CASE("grad accumulates across reuse of a node") {
  Tensor x({1}, {3.0}, true);
  sum(add(mul(x, x), x)).backward();  // d/dx (x^2 + x) = 2x + 1
  CHECK(x.grad()[0] == doctest::Approx(7.0));
}

TEST_CASE("NoGradGuard suppresses graph construction") {
  Tensor x({2}, {1.0, 2.0}, true);
  NoGradGuard guard;
  Tensor y = mul(x, x);
  CHECK_FALSE(y.node()->requires_grad);
  CHECK(y.node()->parents.empty());
}

TEST_CASE("elementwise and broadcast gradients") {
  std::mt19937_64 rng(1);
  Tensor a = randn({3, 4}, rng);
  Tensor b = randn({3, 4}, rng);
  Tensor row = randn({1, 4}, rng);
  CHECK(grad_check([&](const auto& p) { return sum(add(p[0], p[1])); }, {a, b}) < kTol);
  CHECK(grad_check([&](const auto& p) { return sum(sub(p[0], p[1])); }, {a, b}) < kTol);
  CHECK(grad_check([&](const auto& p) { return sum(mul(p[0], p[1])); }, {a, b}) < kTol);
  CHECK(grad_check([&](const auto& p) { return sum(add(p[0], p[1])); }, {a, row}) < kTol);
  CHECK(grad_check([&](const auto& p) { return sum(mul(p[0], p[1])); }, {a, row}) < kTol);
  CHECK(grad_check([&](const auto& p) { return sum(scale(p[0], -1.7)); }, {a}) < kTol);
}

TEST_CASE("matmul and bmm gradients") {
  std::mt19937_64 rng(2);
  Tensor a = randn({3, 5}, rng);
  Tensor b = randn({5, 2}, rng);
  CHECK(grad_check([&](const auto& p) { return sum(matmul(p[0], p[1])); }, {a, b}) < kTol);
  Tensor ab = randn({4, 3, 5}, rng);
  Tensor bb = randn({4, 5, 2}, rng);
  CHECK(grad_check([&](const auto& p) { return sum(bmm(p[0], p[1])); }, {ab, bb}) < kTol);
}

TEST_CASE("matmul forward matches a hand computation") {
  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor b({2, 2}, {5, 6, 7, 8});
  const Tensor c = matmul(a, b);
  CHECK(c.values() == std::vector<double>{19, 22, 43, 50});
}

TEST_CASE("shape ops gradients") {
  std::mt19937_64 rng(3);
  Tensor a = randn({2, 3, 4}, rng);
  CHECK(grad_check([&](const auto& p) { return sum(permute(p[0], {2, 0, 1})); }, {a}) < kTol);
  CHECK(grad_check([&](const auto& p) { return sum(transpose_last2(p[0])); }, {a}) < kTol);
  CHECK(grad_check([&](const auto& p) { return sum(reshape(p[0], {6, -1})); }, {a}) < kTol);
  CHECK(grad_check([&](const auto& p) { return sum(slice_axis(p[0], 1, 1, 3)); }, {a}) < kTol);
  Tensor m = randn({4, 3}, rng);
  CHECK(grad_check([&](const auto& p) { return sum(slice_rows(p[0], 1, 3)); }, {m}) < kTol);
  Tensor b2 = randn({4, 3}, rng);
  CHECK(grad_check([&](const auto& p) { return sum(concat({p[0], p[1]}, 0)); }, {m, b2}) < kTol);
  CHECK(grad_check([&](const auto& p) { return sum(concat({p[0], p[1]}, 1)); }, {m, b2}) < kTol);
}

TEST_CASE("select_positions and embedding gradients") {
  std::mt19937_64 rng(4);
  Tensor x = randn({3, 5, 2}, rng);
  CHECK(grad_check([&](const auto& p) { return sum(select_positions(p[0], {1, 0, 4})); }, {x}) <
        kTol);
  Tensor table = randn({7, 3}, rng);
  CHECK(grad_check(
            [&](const auto& p) { return sum(embedding(p[0], {1, 1, 4, 6}, {2, 2})); },
            {table}) < kTol);
}

TEST_CASE("nonlinearity gradients") {
  std::mt19937_64 rng(5);
  Tensor a = randn({4, 6}, rng);
  CHECK(grad_check([&](const auto& p) { return sum(mul(softmax(p[0]), p[0])); }, {a}) < kTol);
  CHECK(grad_check([&](const auto& p) { return sum(mul(relu(p[0]), p[0])); }, {a}, 1e-6) < 2e-4);
  CHECK(grad_check([&](const auto& p) { return sum(gelu(p[0])); }, {a}) < kTol);
  CHECK(grad_check([&](const auto& p) { return sum(sigmoid(p[0])); }, {a}) < kTol);
  CHECK(grad_check([&](const auto& p) { return mean(mul(p[0], p[0])); }, {a}) < kTol);
}

TEST_CASE("layer_norm gradient") {
  std::mt19937_64 rng(6);
  Tensor x = randn({3, 8}, rng);
  Tensor g = randn({8}, rng);
  Tensor b = randn({8}, rng);
  CHECK(grad_check([&](const auto& p) { return sum(mul(layer_norm(p[0], p[1], p[2]), p[0])); },
                   {x, g, b}) < kTol);
}

TEST_CASE("conv and pooling gradients") {
  std::mt19937_64 rng(7);
  Tensor x = randn({2, 3, 6, 6}, rng);
  Tensor w = randn({4, 3, 3, 3}, rng);
  Tensor b = randn({4}, rng);
  CHECK(grad_check([&](const auto& p) { return sum(conv2d(p[0], p[1], p[2], 1, 1)); }, {x, w, b}) <
        kTol);
  CHECK(grad_check([&](const auto& p) { return sum(conv2d(p[0], p[1], p[2], 2, 1)); }, {x, w, b}) <
        kTol);
  CHECK(grad_check([&](const auto& p) { return sum(mul(avg_pool2d(p[0], 2, 2),
                                                       avg_pool2d(p[0], 2, 2))); },
                   {x}) < kTol);
  CHECK(grad_check([&](const auto& p) { return sum(mul(global_avg_pool(p[0]),
                                                       global_avg_pool(p[0]))); },
                   {x}) < kTol);
  // max pooling: keep inputs away from ties
  Tensor xm({1, 1, 4, 4}, {0.1, 0.9, 0.2, 0.8, 0.5, 0.3, 0.7, 0.4,
                           0.6, 0.05, 0.95, 0.15, 0.35, 0.85, 0.25, 0.45},
            true);
  CHECK(grad_check([&](const auto& p) { return sum(max_pool2d(p[0], 2, 2)); }, {xm}, 1e-6) < kTol);
}

TEST_CASE("loss gradients") {
  std::mt19937_64 rng(8);
  Tensor logits = randn({5, 7}, rng);
  const std::vector<int> targets = {0, 3, -1, 6, 2};
  CHECK(grad_check([&](const auto& p) { return cross_entropy(p[0], targets); }, {logits}) < kTol);
  Tensor z = randn({6}, rng);
  const std::vector<double> labels = {1, 0, 1, 1, 0, 0};
  CHECK(grad_check([&](const auto& p) { return bce_with_logits(p[0], labels); }, {z}) < kTol);
  const std::vector<double> weights = {1, 0, 1, 0, 1, 1};
  CHECK(grad_check([&](const auto& p) { return bce_with_logits(p[0], labels, weights); }, {z}) <
        kTol);
}

TEST_CASE("cross entropy ignores masked rows") {
  Tensor logits({2, 3}, {10.0, 0.0, 0.0, 0.0, 10.0, 0.0});
  CHECK(cross_entropy(logits, {0, -1}).item() ==
        doctest::Approx(cross_entropy(Tensor({1, 3}, {10.0, 0.0, 0.0}), {0}).item()));
}

TEST_CASE("dropout scales and disables correctly") {
  std::mt19937_64 rng(9);
  Tensor x = Tensor::full({1000}, 1.0);
  const Tensor eval_out = dropout(x, 0.4, rng, false);
  CHECK(eval_out.values() == x.values());
  const Tensor train_out = dropout(x, 0.4, rng, true);
  double mean_v = 0;
  int zeros = 0;
  for (double v : train_out.values()) {
    mean_v += v;
    zeros += v == 0.0;
  }
  mean_v /= 1000;
  CHECK(mean_v == doctest::Approx(1.0).epsilon(0.1));
  CHECK(zeros > 300);
  CHECK(zeros < 500);
}

TEST_CASE("adam converges on a quadratic") {
  Tensor x({2}, {5.0, -3.0}, true);
  Adam opt({x}, 0.1);
  for (int i = 0; i < 500; ++i) {
    Tensor loss = sum(mul(x, x));
    opt.zero_grad();
    loss.backward();
    opt.step();
  }
  CHECK(std::abs(x.values()[0]) < 1e-2);
  CHECK(std::abs(x.values()[1]) < 1e-2);
}

TEST_CASE("truncated normal respects the two-sigma bound and the seed") {
  std::mt19937_64 rng_a(11), rng_b(11);
  const Tensor a = Tensor::truncated_normal({1000}, 0.02, rng_a);
  const Tensor b = Tensor::truncated_normal({1000}, 0.02, rng_b);
  CHECK(a.values() == b.values());
  for (double v : a.values()) CHECK(std::abs(v) <= 0.04 + 1e-12);
}
