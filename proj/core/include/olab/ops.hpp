#pragma once

#include <random>
#include <vector>

#include "olab/tensor.hpp"

namespace olab::nn {

// Elementwise with numpy-style broadcasting (dims aligned right, 1 stretches).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

// (M,K) x (K,N) via BLAS.
Tensor matmul(const Tensor& a, const Tensor& b);
// (B,M,K) x (B,K,N).
Tensor bmm(const Tensor& a, const Tensor& b);

Tensor transpose(const Tensor& a);             // 2-D
Tensor transpose_last2(const Tensor& a);       // swaps the last two axes, ndim >= 2
Tensor permute(const Tensor& a, const std::vector<int>& axes);
Tensor reshape(const Tensor& a, Shape shape);  // one dim may be -1
Tensor concat(const std::vector<Tensor>& parts, int axis);
// rows [begin, end) along axis 0.
Tensor slice_rows(const Tensor& a, int begin, int end);
// [begin, end) along an arbitrary axis.
Tensor slice_axis(const Tensor& a, int axis, int begin, int end);
// x: (B,L,D), picks x[b, pos[b], :] -> (B,D).
Tensor select_positions(const Tensor& x, const std::vector<int>& pos);

// table: (V,D); ids flattened row-major with id_shape; out id_shape + [D].
Tensor embedding(const Tensor& table, const std::vector<int>& ids, const Shape& id_shape);

Tensor softmax(const Tensor& a);  // last dim, max-subtracted
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);  // tanh form
Tensor sigmoid(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// x: (B,Cin,H,W), w: (Cout,Cin,kh,kw), b: (Cout); im2col + GEMM.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);
Tensor max_pool2d(const Tensor& x, int kernel, int stride);
Tensor avg_pool2d(const Tensor& x, int kernel, int stride);
Tensor global_avg_pool(const Tensor& x);  // (B,C,H,W) -> (B,C)

// Train-only inverted dropout; identity when !training or p == 0.
Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng, bool training);

// logits: (N,C); targets per row, ignore_index rows excluded; mean loss.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                     int ignore_index = -1);
// logits: (N,); weighted mean of sigmoid BCE over weight > 0 rows.
Tensor bce_with_logits(const Tensor& logits, const std::vector<double>& labels,
                       const std::vector<double>& weights = {});

// Central finite differences against reverse mode over every parameter
// (or a seeded sample of sample_per_tensor components when positive).
// Returns the max relative error with denominator max(|a|,|b|,1e-8).
double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                  std::vector<Tensor> params, double h = 1e-5, int sample_per_tensor = 0,
                  uint64_t seed = 0);

}  // namespace olab::nn
