#pragma once

#include <vector>

#include "olab/tensor.hpp"

namespace olab::nn {

// Bias-corrected adaptive-moment (Adam) updates over a fixed parameter list.
class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, double lr = 1e-4, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8);

  void zero_grad();
  void step();

  int64_t step_count() const { return step_count_; }
  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  int64_t step_count_ = 0;
};

}  // namespace olab::nn
