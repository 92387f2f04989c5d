#include "olab/ops.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

namespace olab::nn {

namespace {

using NodePtr = std::shared_ptr<Node>;

Tensor wrap(NodePtr n) { return Tensor(std::move(n)); }

NodePtr new_node(Shape shape, size_t n) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value.assign(n, 0.0);
  return node;
}

void attach(const NodePtr& out, std::vector<NodePtr> parents, std::function<void()> backprop) {
  bool rg = false;
  for (const auto& p : parents) rg = rg || p->requires_grad;
  if (rg && grad_enabled()) {
    out->requires_grad = true;
    out->parents = std::move(parents);
    out->backprop = std::move(backprop);
  }
}

struct Broadcast {
  Shape out;
  std::vector<size_t> sa, sb;  // per-dim strides into a and b (0 where stretched)
};

Broadcast broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
  const int nd = static_cast<int>(std::max(a.size(), b.size()));
  Shape pa(nd, 1), pb(nd, 1);
  std::copy(a.begin(), a.end(), pa.begin() + (nd - a.size()));
  std::copy(b.begin(), b.end(), pb.begin() + (nd - b.size()));
  Broadcast bc;
  bc.out.resize(nd);
  for (int d = 0; d < nd; ++d) {
    if (pa[d] == pb[d] || pa[d] == 1 || pb[d] == 1) {
      bc.out[d] = std::max(pa[d], pb[d]);
    } else {
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " +
                       shape_str(b));
    }
  }
  bc.sa.assign(nd, 0);
  bc.sb.assign(nd, 0);
  size_t stride = 1;
  for (int d = nd - 1; d >= 0; --d) {
    bc.sa[d] = (pa[d] == 1) ? 0 : stride;
    stride *= pa[d];
  }
  stride = 1;
  for (int d = nd - 1; d >= 0; --d) {
    bc.sb[d] = (pb[d] == 1) ? 0 : stride;
    stride *= pb[d];
  }
  return bc;
}

template <class F>
void for_broadcast(const Shape& out, const std::vector<size_t>& sa, const std::vector<size_t>& sb,
                   F&& f) {
  const size_t total = shape_size(out);
  if (total == 0) return;
  const int nd = static_cast<int>(out.size());
  if (nd == 0) {
    f(size_t{0}, size_t{0}, size_t{0});
    return;
  }
  std::vector<int> idx(nd, 0);
  size_t ia = 0, ib = 0;
  for (size_t i = 0;; ++i) {
    f(i, ia, ib);
    int d = nd - 1;
    for (;; --d) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      ia -= static_cast<size_t>(out[d]) * sa[d];
      ib -= static_cast<size_t>(out[d]) * sb[d];
      idx[d] = 0;
      if (d == 0) return;
    }
  }
}

Tensor binary_op(const Tensor& a, const Tensor& b, const char* name,
                 double (*fwd)(double, double), void (*bwd)(double g, double av, double bv,
                                                            double* da, double* db)) {
  Broadcast bc = broadcast_shapes(a.shape(), b.shape(), name);
  auto out = new_node(bc.out, shape_size(bc.out));
  const auto& av = a.values();
  const auto& bv = b.values();
  for_broadcast(bc.out, bc.sa, bc.sb,
                [&](size_t i, size_t ia, size_t ib) { out->value[i] = fwd(av[ia], bv[ib]); });
  auto an = a.node(), bn = b.node();
  Node* o = out.get();
  attach(out, {an, bn}, [o, an, bn, bc, bwd]() {
    for_broadcast(bc.out, bc.sa, bc.sb, [&](size_t i, size_t ia, size_t ib) {
      double da = 0, db = 0;
      bwd(o->grad[i], an->value[ia], bn->value[ib], &da, &db);
      if (an->requires_grad) an->grad[ia] += da;
      if (bn->requires_grad) bn->grad[ib] += db;
    });
  });
  return wrap(out);
}

// Pointwise unary op plumbing; dfn receives (x, y) and returns dy/dx.
Tensor unary_op(const Tensor& a, double (*fwd)(double), double (*dfn)(double, double)) {
  auto out = new_node(a.shape(), a.size());
  const auto& av = a.values();
  for (size_t i = 0; i < av.size(); ++i) out->value[i] = fwd(av[i]);
  auto an = a.node();
  Node* o = out.get();
  attach(out, {an}, [o, an, dfn]() {
    if (!an->requires_grad) return;
    for (size_t i = 0; i < o->value.size(); ++i) {
      an->grad[i] += o->grad[i] * dfn(an->value[i], o->value[i]);
    }
  });
  return wrap(out);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double g, double, double, double* da, double* db) {
        *da = g;
        *db = g;
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double g, double, double, double* da, double* db) {
        *da = g;
        *db = -g;
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double g, double x, double y, double* da, double* db) {
        *da = g * y;
        *db = g * x;
      });
}

Tensor scale(const Tensor& a, double s) {
  auto out = new_node(a.shape(), a.size());
  for (size_t i = 0; i < a.size(); ++i) out->value[i] = a.values()[i] * s;
  auto an = a.node();
  Node* o = out.get();
  attach(out, {an}, [o, an, s]() {
    if (!an->requires_grad) return;
    for (size_t i = 0; i < o->value.size(); ++i) an->grad[i] += o->grad[i] * s;
  });
  return wrap(out);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  const int M = a.dim(0), K = a.dim(1), N = b.dim(1);
  auto out = new_node({M, N}, static_cast<size_t>(M) * N);
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, M, N, K, 1.0, a.values().data(), K,
              b.values().data(), N, 0.0, out->value.data(), N);
  auto an = a.node(), bn = b.node();
  Node* o = out.get();
  attach(out, {an, bn}, [o, an, bn, M, K, N]() {
    if (an->requires_grad) {
      cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, M, K, N, 1.0, o->grad.data(), N,
                  bn->value.data(), N, 1.0, an->grad.data(), K);
    }
    if (bn->requires_grad) {
      cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, K, N, M, 1.0, an->value.data(), K,
                  o->grad.data(), N, 1.0, bn->grad.data(), N);
    }
  });
  return wrap(out);
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    throw ShapeError("bmm: incompatible shapes " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  const int B = a.dim(0), M = a.dim(1), K = a.dim(2), N = b.dim(2);
  auto out = new_node({B, M, N}, static_cast<size_t>(B) * M * N);
  for (int i = 0; i < B; ++i) {
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, M, N, K, 1.0,
                a.values().data() + static_cast<size_t>(i) * M * K, K,
                b.values().data() + static_cast<size_t>(i) * K * N, N, 0.0,
                out->value.data() + static_cast<size_t>(i) * M * N, N);
  }
  auto an = a.node(), bn = b.node();
  Node* o = out.get();
  attach(out, {an, bn}, [o, an, bn, B, M, K, N]() {
    for (int i = 0; i < B; ++i) {
      const double* g = o->grad.data() + static_cast<size_t>(i) * M * N;
      if (an->requires_grad) {
        cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, M, K, N, 1.0, g, N,
                    bn->value.data() + static_cast<size_t>(i) * K * N, N, 1.0,
                    an->grad.data() + static_cast<size_t>(i) * M * K, K);
      }
      if (bn->requires_grad) {
        cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, K, N, M, 1.0,
                    an->value.data() + static_cast<size_t>(i) * M * K, K, g, N, 1.0,
                    bn->grad.data() + static_cast<size_t>(i) * K * N, N);
      }
    }
  });
  return wrap(out);
}

Tensor permute(const Tensor& a, const std::vector<int>& axes) {
  const int nd = a.ndim();
  if (static_cast<int>(axes.size()) != nd) {
    throw ShapeError("permute: axes count does not match tensor rank");
  }
  Shape out_shape(nd);
  for (int d = 0; d < nd; ++d) out_shape[d] = a.dim(axes[d]);
  std::vector<size_t> in_strides(nd, 1), map(a.size());
  for (int d = nd - 2; d >= 0; --d) in_strides[d] = in_strides[d + 1] * a.dim(d + 1);
  std::vector<int> idx(nd, 0);
  for (size_t i = 0; i < a.size(); ++i) {
    size_t src = 0;
    for (int d = 0; d < nd; ++d) src += static_cast<size_t>(idx[d]) * in_strides[axes[d]];
    map[i] = src;
    for (int d = nd - 1; d >= 0; --d) {
      if (++idx[d] < out_shape[d]) break;
      idx[d] = 0;
    }
  }
  auto out = new_node(out_shape, a.size());
  for (size_t i = 0; i < map.size(); ++i) out->value[i] = a.values()[map[i]];
  auto an = a.node();
  Node* o = out.get();
  attach(out, {an}, [o, an, map = std::move(map)]() {
    if (!an->requires_grad) return;
    for (size_t i = 0; i < map.size(); ++i) an->grad[map[i]] += o->grad[i];
  });
  return wrap(out);
}

Tensor transpose(const Tensor& a) {
  if (a.ndim() != 2) throw ShapeError("transpose: expected 2-D, got " + shape_str(a.shape()));
  return permute(a, {1, 0});
}

Tensor transpose_last2(const Tensor& a) {
  if (a.ndim() < 2) throw ShapeError("transpose_last2: rank must be >= 2");
  std::vector<int> axes(a.ndim());
  std::iota(axes.begin(), axes.end(), 0);
  std::swap(axes[a.ndim() - 1], axes[a.ndim() - 2]);
  return permute(a, axes);
}

Tensor reshape(const Tensor& a, Shape shape) {
  int infer = -1;
  size_t known = 1;
  for (size_t d = 0; d < shape.size(); ++d) {
    if (shape[d] == -1) {
      if (infer >= 0) throw ShapeError("reshape: more than one -1 dimension");
      infer = static_cast<int>(d);
    } else {
      known *= static_cast<size_t>(shape[d]);
    }
  }
  if (infer >= 0) {
    if (known == 0 || a.size() % known != 0) {
      throw ShapeError("reshape: cannot infer dimension for " + shape_str(a.shape()));
    }
    shape[infer] = static_cast<int>(a.size() / known);
  }
  if (shape_size(shape) != a.size()) {
    throw ShapeError("reshape: size mismatch " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  auto out = new_node(std::move(shape), a.size());
  out->value = a.values();
  auto an = a.node();
  Node* o = out.get();
  attach(out, {an}, [o, an]() {
    if (!an->requires_grad) return;
    for (size_t i = 0; i < o->grad.size(); ++i) an->grad[i] += o->grad[i];
  });
  return wrap(out);
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const int nd = parts[0].ndim();
  if (axis < 0 || axis >= nd) throw ShapeError("concat: axis out of range");
  Shape out_shape = parts[0].shape();
  int axis_total = 0;
  for (const auto& p : parts) {
    if (p.ndim() != nd) throw ShapeError("concat: rank mismatch");
    for (int d = 0; d < nd; ++d) {
      if (d != axis && p.dim(d) != out_shape[d]) {
        throw ShapeError("concat: shape mismatch " + shape_str(p.shape()));
      }
    }
    axis_total += p.dim(axis);
  }
  out_shape[axis] = axis_total;
  size_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= out_shape[d];
  for (int d = axis + 1; d < nd; ++d) inner *= out_shape[d];
  auto out = new_node(out_shape, shape_size(out_shape));
  std::vector<NodePtr> parents;
  size_t axis_off = 0;
  std::vector<std::pair<NodePtr, size_t>> placement;  // parent, axis offset
  for (const auto& p : parts) {
    const size_t pa = static_cast<size_t>(p.dim(axis));
    for (size_t oi = 0; oi < outer; ++oi) {
      std::memcpy(out->value.data() + ((oi * axis_total) + axis_off) * inner,
                  p.values().data() + oi * pa * inner, pa * inner * sizeof(double));
    }
    placement.push_back({p.node(), axis_off});
    parents.push_back(p.node());
    axis_off += pa;
  }
  Node* o = out.get();
  attach(out, parents, [o, placement, outer, inner, axis_total]() {
    for (const auto& [pn, off] : placement) {
      if (!pn->requires_grad) continue;
      const size_t pa = pn->grad.size() / (outer * inner);
      for (size_t oi = 0; oi < outer; ++oi) {
        const double* g = o->grad.data() + ((oi * axis_total) + off) * inner;
        double* dst = pn->grad.data() + oi * pa * inner;
        for (size_t k = 0; k < pa * inner; ++k) dst[k] += g[k];
      }
    }
  });
  return wrap(out);
}

Tensor slice_rows(const Tensor& a, int begin, int end) {
  if (a.ndim() < 1 || begin < 0 || end > a.dim(0) || begin >= end) {
    throw ShapeError("slice_rows: bad range [" + std::to_string(begin) + "," +
                     std::to_string(end) + ") for " + shape_str(a.shape()));
  }
  Shape out_shape = a.shape();
  out_shape[0] = end - begin;
  const size_t row = a.size() / a.dim(0);
  auto out = new_node(out_shape, shape_size(out_shape));
  std::memcpy(out->value.data(), a.values().data() + begin * row,
              out->value.size() * sizeof(double));
  auto an = a.node();
  Node* o = out.get();
  attach(out, {an}, [o, an, begin, row]() {
    if (!an->requires_grad) return;
    for (size_t i = 0; i < o->grad.size(); ++i) an->grad[begin * row + i] += o->grad[i];
  });
  return wrap(out);
}

Tensor slice_axis(const Tensor& a, int axis, int begin, int end) {
  if (axis < 0 || axis >= a.ndim() || begin < 0 || end > a.dim(axis) || begin >= end) {
    throw ShapeError("slice_axis: bad axis/range for " + shape_str(a.shape()));
  }
  Shape out_shape = a.shape();
  out_shape[axis] = end - begin;
  size_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= a.dim(d);
  for (int d = axis + 1; d < a.ndim(); ++d) inner *= a.dim(d);
  const size_t in_axis = a.dim(axis), out_axis = end - begin;
  auto out = new_node(out_shape, shape_size(out_shape));
  for (size_t oi = 0; oi < outer; ++oi) {
    std::memcpy(out->value.data() + oi * out_axis * inner,
                a.values().data() + (oi * in_axis + begin) * inner,
                out_axis * inner * sizeof(double));
  }
  auto an = a.node();
  Node* o = out.get();
  attach(out, {an}, [o, an, outer, inner, in_axis, out_axis, begin]() {
    if (!an->requires_grad) return;
    for (size_t oi = 0; oi < outer; ++oi) {
      const double* g = o->grad.data() + oi * out_axis * inner;
      double* dst = an->grad.data() + (oi * in_axis + begin) * inner;
      for (size_t k = 0; k < out_axis * inner; ++k) dst[k] += g[k];
    }
  });
  return wrap(out);
}

Tensor select_positions(const Tensor& x, const std::vector<int>& pos) {
  if (x.ndim() != 3) throw ShapeError("select_positions: expected (B,L,D)");
  const int B = x.dim(0), L = x.dim(1), D = x.dim(2);
  if (static_cast<int>(pos.size()) != B) {
    throw ShapeError("select_positions: position count must equal batch size");
  }
  auto out = new_node({B, D}, static_cast<size_t>(B) * D);
  for (int b = 0; b < B; ++b) {
    if (pos[b] < 0 || pos[b] >= L) throw ShapeError("select_positions: index out of range");
    std::memcpy(out->value.data() + static_cast<size_t>(b) * D,
                x.values().data() + (static_cast<size_t>(b) * L + pos[b]) * D,
                D * sizeof(double));
  }
  auto xn = x.node();
  Node* o = out.get();
  attach(out, {xn}, [o, xn, pos, L, D]() {
    if (!xn->requires_grad) return;
    const int B = static_cast<int>(pos.size());
    for (int b = 0; b < B; ++b) {
      double* dst = xn->grad.data() + (static_cast<size_t>(b) * L + pos[b]) * D;
      const double* g = o->grad.data() + static_cast<size_t>(b) * D;
      for (int d = 0; d < D; ++d) dst[d] += g[d];
    }
  });
  return wrap(out);
}

Tensor embedding(const Tensor& table, const std::vector<int>& ids, const Shape& id_shape) {
  if (table.ndim() != 2) throw ShapeError("embedding: table must be 2-D");
  if (shape_size(id_shape) != ids.size()) throw ShapeError("embedding: ids/id_shape mismatch");
  const int V = table.dim(0), D = table.dim(1);
  for (int id : ids) {
    if (id < 0 || id >= V) throw ShapeError("embedding: id " + std::to_string(id) + " out of range");
  }
  Shape out_shape = id_shape;
  out_shape.push_back(D);
  auto out = new_node(out_shape, ids.size() * D);
  for (size_t i = 0; i < ids.size(); ++i) {
    std::memcpy(out->value.data() + i * D, table.values().data() + static_cast<size_t>(ids[i]) * D,
                D * sizeof(double));
  }
  auto tn = table.node();
  Node* o = out.get();
  attach(out, {tn}, [o, tn, ids, D]() {
    if (!tn->requires_grad) return;
    for (size_t i = 0; i < ids.size(); ++i) {
      double* dst = tn->grad.data() + static_cast<size_t>(ids[i]) * D;
      const double* g = o->grad.data() + i * D;
      for (int d = 0; d < D; ++d) dst[d] += g[d];
    }
  });
  return wrap(out);
}

Tensor softmax(const Tensor& a) {
  if (a.ndim() < 1) throw ShapeError("softmax: rank must be >= 1");
  const int C = a.dim(a.ndim() - 1);
  const size_t rows = a.size() / C;
  auto out = new_node(a.shape(), a.size());
  for (size_t r = 0; r < rows; ++r) {
    const double* x = a.values().data() + r * C;
    double* y = out->value.data() + r * C;
    double mx = x[0];
    for (int c = 1; c < C; ++c) mx = std::max(mx, x[c]);
    double z = 0;
    for (int c = 0; c < C; ++c) {
      y[c] = std::exp(x[c] - mx);
      z += y[c];
    }
    for (int c = 0; c < C; ++c) y[c] /= z;
  }
  auto an = a.node();
  Node* o = out.get();
  attach(out, {an}, [o, an, C, rows]() {
    if (!an->requires_grad) return;
    for (size_t r = 0; r < rows; ++r) {
      const double* y = o->value.data() + r * C;
      const double* g = o->grad.data() + r * C;
      double dot = 0;
      for (int c = 0; c < C; ++c) dot += g[c] * y[c];
      double* da = an->grad.data() + r * C;
      for (int c = 0; c < C; ++c) da[c] += y[c] * (g[c] - dot);
    }
  });
  return wrap(out);
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const int D = x.dim(x.ndim() - 1);
  if (gain.ndim() != 1 || bias.ndim() != 1 || gain.dim(0) != D || bias.dim(0) != D) {
    throw ShapeError("layer_norm: gain/bias must be (" + std::to_string(D) + ")");
  }
  const size_t rows = x.size() / D;
  auto out = new_node(x.shape(), x.size());
  std::vector<double> inv_std(rows), xhat(x.size());
  for (size_t r = 0; r < rows; ++r) {
    const double* xr = x.values().data() + r * D;
    double mu = 0;
    for (int d = 0; d < D; ++d) mu += xr[d];
    mu /= D;
    double var = 0;
    for (int d = 0; d < D; ++d) var += (xr[d] - mu) * (xr[d] - mu);
    var /= D;
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (int d = 0; d < D; ++d) {
      const double h = (xr[d] - mu) * inv_std[r];
      xhat[r * D + d] = h;
      out->value[r * D + d] = h * gain.values()[d] + bias.values()[d];
    }
  }
  auto xn = x.node(), gn = gain.node(), bn = bias.node();
  Node* o = out.get();
  attach(out, {xn, gn, bn},
         [o, xn, gn, bn, D, rows, inv_std = std::move(inv_std), xhat = std::move(xhat)]() {
           for (size_t r = 0; r < rows; ++r) {
             const double* g = o->grad.data() + r * D;
             const double* h = xhat.data() + r * D;
             if (gn->requires_grad) {
               for (int d = 0; d < D; ++d) gn->grad[d] += g[d] * h[d];
             }
             if (bn->requires_grad) {
               for (int d = 0; d < D; ++d) bn->grad[d] += g[d];
             }
             if (xn->requires_grad) {
               double m1 = 0, m2 = 0;  // mean(dxhat), mean(dxhat * xhat)
               for (int d = 0; d < D; ++d) {
                 const double dh = g[d] * gn->value[d];
                 m1 += dh;
                 m2 += dh * h[d];
               }
               m1 /= D;
               m2 /= D;
               double* dx = xn->grad.data() + r * D;
               for (int d = 0; d < D; ++d) {
                 const double dh = g[d] * gn->value[d];
                 dx[d] += inv_std[r] * (dh - m1 - h[d] * m2);
               }
             }
           }
         });
  return wrap(out);
}

Tensor relu(const Tensor& a) {
  return unary_op(
      a, [](double x) { return x > 0 ? x : 0.0; },
      [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Tensor gelu(const Tensor& a) {
  return unary_op(
      a,
      [](double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); },
      [](double x, double) {
        const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
      });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor sum(const Tensor& a) {
  auto out = new_node({}, 1);
  out->value[0] = std::accumulate(a.values().begin(), a.values().end(), 0.0);
  auto an = a.node();
  Node* o = out.get();
  attach(out, {an}, [o, an]() {
    if (!an->requires_grad) return;
    for (auto& g : an->grad) g += o->grad[0];
  });
  return wrap(out);
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

namespace {

void im2col(const double* x, int C, int H, int W, int kh, int kw, int stride, int pad, int Ho,
            int Wo, double* col) {
  // col: (C*kh*kw) x (Ho*Wo)
  for (int c = 0; c < C; ++c) {
    for (int i = 0; i < kh; ++i) {
      for (int j = 0; j < kw; ++j) {
        double* row = col + ((static_cast<size_t>(c) * kh + i) * kw + j) * Ho * Wo;
        for (int oy = 0; oy < Ho; ++oy) {
          const int sy = oy * stride - pad + i;
          for (int ox = 0; ox < Wo; ++ox) {
            const int sx = ox * stride - pad + j;
            row[oy * Wo + ox] = (sy >= 0 && sy < H && sx >= 0 && sx < W)
                                    ? x[(static_cast<size_t>(c) * H + sy) * W + sx]
                                    : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, int C, int H, int W, int kh, int kw, int stride, int pad,
                int Ho, int Wo, double* dx) {
  for (int c = 0; c < C; ++c) {
    for (int i = 0; i < kh; ++i) {
      for (int j = 0; j < kw; ++j) {
        const double* row = col + ((static_cast<size_t>(c) * kh + i) * kw + j) * Ho * Wo;
        for (int oy = 0; oy < Ho; ++oy) {
          const int sy = oy * stride - pad + i;
          if (sy < 0 || sy >= H) continue;
          for (int ox = 0; ox < Wo; ++ox) {
            const int sx = ox * stride - pad + j;
            if (sx < 0 || sx >= W) continue;
            dx[(static_cast<size_t>(c) * H + sy) * W + sx] += row[oy * Wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  if (x.ndim() != 4 || w.ndim() != 4 || b.ndim() != 1) {
    throw ShapeError("conv2d: expected x (B,C,H,W), w (Co,Ci,kh,kw), b (Co)");
  }
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != C || b.dim(0) != Co) {
    throw ShapeError("conv2d: channel mismatch x " + shape_str(x.shape()) + " w " +
                     shape_str(w.shape()));
  }
  if (stride < 1 || pad < 0) throw ShapeError("conv2d: bad stride/pad");
  const int Ho = (H + 2 * pad - kh) / stride + 1;
  const int Wo = (W + 2 * pad - kw) / stride + 1;
  if (Ho <= 0 || Wo <= 0) throw ShapeError("conv2d: kernel larger than padded input");
  const int K = C * kh * kw;
  auto out = new_node({B, Co, Ho, Wo}, static_cast<size_t>(B) * Co * Ho * Wo);
  std::vector<double> col(static_cast<size_t>(K) * Ho * Wo);
  for (int n = 0; n < B; ++n) {
    im2col(x.values().data() + static_cast<size_t>(n) * C * H * W, C, H, W, kh, kw, stride, pad,
           Ho, Wo, col.data());
    double* y = out->value.data() + static_cast<size_t>(n) * Co * Ho * Wo;
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, Co, Ho * Wo, K, 1.0, w.values().data(),
                K, col.data(), Ho * Wo, 0.0, y, Ho * Wo);
    for (int co = 0; co < Co; ++co) {
      const double bias = b.values()[co];
      for (int p = 0; p < Ho * Wo; ++p) y[co * Ho * Wo + p] += bias;
    }
  }
  auto xn = x.node(), wn = w.node(), bn = b.node();
  Node* o = out.get();
  attach(out, {xn, wn, bn}, [o, xn, wn, bn, B, C, H, W, Co, kh, kw, stride, pad, Ho, Wo, K]() {
    // im2col is recomputed here rather than cached; the buffers dominate
    // memory at vision batch sizes.
    std::vector<double> col(static_cast<size_t>(K) * Ho * Wo);
    std::vector<double> dcol(static_cast<size_t>(K) * Ho * Wo);
    for (int n = 0; n < B; ++n) {
      const double* g = o->grad.data() + static_cast<size_t>(n) * Co * Ho * Wo;
      im2col(xn->value.data() + static_cast<size_t>(n) * C * H * W, C, H, W, kh, kw, stride, pad,
             Ho, Wo, col.data());
      if (wn->requires_grad) {
        cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, Co, K, Ho * Wo, 1.0, g, Ho * Wo,
                    col.data(), Ho * Wo, 1.0, wn->grad.data(), K);
      }
      if (bn->requires_grad) {
        for (int co = 0; co < Co; ++co) {
          double s = 0;
          for (int p = 0; p < Ho * Wo; ++p) s += g[co * Ho * Wo + p];
          bn->grad[co] += s;
        }
      }
      if (xn->requires_grad) {
        cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, K, Ho * Wo, Co, 1.0,
                    wn->value.data(), K, g, Ho * Wo, 0.0, dcol.data(), Ho * Wo);
        col2im_add(dcol.data(), C, H, W, kh, kw, stride, pad, Ho, Wo,
                   xn->grad.data() + static_cast<size_t>(n) * C * H * W);
      }
    }
  });
  return wrap(out);
}

Tensor max_pool2d(const Tensor& x, int kernel, int stride) {
  if (x.ndim() != 4) throw ShapeError("max_pool2d: expected (B,C,H,W)");
  if (kernel < 1 || stride < 1) throw ShapeError("max_pool2d: bad kernel/stride");
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Ho = (H - kernel) / stride + 1, Wo = (W - kernel) / stride + 1;
  if (Ho <= 0 || Wo <= 0) throw ShapeError("max_pool2d: kernel larger than input");
  auto out = new_node({B, C, Ho, Wo}, static_cast<size_t>(B) * C * Ho * Wo);
  std::vector<size_t> argmax(out->value.size());
  size_t oi = 0;
  for (int n = 0; n < B; ++n) {
    for (int c = 0; c < C; ++c) {
      const double* plane = x.values().data() + (static_cast<size_t>(n) * C + c) * H * W;
      const size_t base = (static_cast<size_t>(n) * C + c) * H * W;
      for (int oy = 0; oy < Ho; ++oy) {
        for (int ox = 0; ox < Wo; ++ox, ++oi) {
          double best = -1e300;
          size_t best_idx = 0;
          for (int i = 0; i < kernel; ++i) {
            for (int j = 0; j < kernel; ++j) {
              const int sy = oy * stride + i, sx = ox * stride + j;
              const double v = plane[sy * W + sx];
              if (v > best) {
                best = v;
                best_idx = base + static_cast<size_t>(sy) * W + sx;
              }
            }
          }
          out->value[oi] = best;
          argmax[oi] = best_idx;
        }
      }
    }
  }
  auto xn = x.node();
  Node* o = out.get();
  attach(out, {xn}, [o, xn, argmax = std::move(argmax)]() {
    if (!xn->requires_grad) return;
    for (size_t i = 0; i < argmax.size(); ++i) xn->grad[argmax[i]] += o->grad[i];
  });
  return wrap(out);
}

Tensor avg_pool2d(const Tensor& x, int kernel, int stride) {
  if (x.ndim() != 4) throw ShapeError("avg_pool2d: expected (B,C,H,W)");
  if (kernel < 1 || stride < 1) throw ShapeError("avg_pool2d: bad kernel/stride");
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Ho = (H - kernel) / stride + 1, Wo = (W - kernel) / stride + 1;
  if (Ho <= 0 || Wo <= 0) throw ShapeError("avg_pool2d: kernel larger than input");
  auto out = new_node({B, C, Ho, Wo}, static_cast<size_t>(B) * C * Ho * Wo);
  const double inv = 1.0 / (kernel * kernel);
  size_t oi = 0;
  for (int n = 0; n < B; ++n) {
    for (int c = 0; c < C; ++c) {
      const double* plane = x.values().data() + (static_cast<size_t>(n) * C + c) * H * W;
      for (int oy = 0; oy < Ho; ++oy) {
        for (int ox = 0; ox < Wo; ++ox, ++oi) {
          double s = 0;
          for (int i = 0; i < kernel; ++i) {
            for (int j = 0; j < kernel; ++j) s += plane[(oy * stride + i) * W + ox * stride + j];
          }
          out->value[oi] = s * inv;
        }
      }
    }
  }
  auto xn = x.node();
  Node* o = out.get();
  attach(out, {xn}, [o, xn, B, C, H, W, Ho, Wo, kernel, stride, inv]() {
    if (!xn->requires_grad) return;
    size_t oi = 0;
    for (int n = 0; n < B; ++n) {
      for (int c = 0; c < C; ++c) {
        double* dplane = xn->grad.data() + (static_cast<size_t>(n) * C + c) * H * W;
        for (int oy = 0; oy < Ho; ++oy) {
          for (int ox = 0; ox < Wo; ++ox, ++oi) {
            const double g = o->grad[oi] * inv;
            for (int i = 0; i < kernel; ++i) {
              for (int j = 0; j < kernel; ++j) {
                dplane[(oy * stride + i) * W + ox * stride + j] += g;
              }
            }
          }
        }
      }
    }
  });
  return wrap(out);
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.ndim() != 4) throw ShapeError("global_avg_pool: expected (B,C,H,W)");
  const int B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  auto out = new_node({B, C}, static_cast<size_t>(B) * C);
  for (int n = 0; n < B; ++n) {
    for (int c = 0; c < C; ++c) {
      const double* plane = x.values().data() + (static_cast<size_t>(n) * C + c) * HW;
      double s = 0;
      for (int p = 0; p < HW; ++p) s += plane[p];
      out->value[static_cast<size_t>(n) * C + c] = s / HW;
    }
  }
  auto xn = x.node();
  Node* o = out.get();
  attach(out, {xn}, [o, xn, B, C, HW]() {
    if (!xn->requires_grad) return;
    for (int n = 0; n < B; ++n) {
      for (int c = 0; c < C; ++c) {
        const double g = o->grad[static_cast<size_t>(n) * C + c] / HW;
        double* dplane = xn->grad.data() + (static_cast<size_t>(n) * C + c) * HW;
        for (int p = 0; p < HW; ++p) dplane[p] += g;
      }
    }
  });
  return wrap(out);
}

Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng, bool training) {
  if (p < 0.0 || p >= 1.0) throw ShapeError("dropout: p must be in [0, 1)");
  if (!training || p == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - p);
  std::vector<double> mask(x.size());
  const double inv_keep = 1.0 / (1.0 - p);
  for (auto& m : mask) m = keep(rng) ? inv_keep : 0.0;
  auto out = new_node(x.shape(), x.size());
  for (size_t i = 0; i < x.size(); ++i) out->value[i] = x.values()[i] * mask[i];
  auto xn = x.node();
  Node* o = out.get();
  attach(out, {xn}, [o, xn, mask = std::move(mask)]() {
    if (!xn->requires_grad) return;
    for (size_t i = 0; i < mask.size(); ++i) xn->grad[i] += o->grad[i] * mask[i];
  });
  return wrap(out);
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets, int ignore_index) {
  if (logits.ndim() != 2) throw ShapeError("cross_entropy: logits must be (N,C)");
  const int N = logits.dim(0), C = logits.dim(1);
  if (static_cast<int>(targets.size()) != N) {
    throw ShapeError("cross_entropy: target count mismatch");
  }
  int count = 0;
  double total = 0;
  std::vector<double> probs(logits.size());
  for (int r = 0; r < N; ++r) {
    const double* x = logits.values().data() + static_cast<size_t>(r) * C;
    double* pr = probs.data() + static_cast<size_t>(r) * C;
    double mx = x[0];
    for (int c = 1; c < C; ++c) mx = std::max(mx, x[c]);
    double z = 0;
    for (int c = 0; c < C; ++c) {
      pr[c] = std::exp(x[c] - mx);
      z += pr[c];
    }
    for (int c = 0; c < C; ++c) pr[c] /= z;
    if (targets[r] == ignore_index) continue;
    if (targets[r] < 0 || targets[r] >= C) throw ShapeError("cross_entropy: target out of range");
    total += -std::log(std::max(pr[targets[r]], 1e-300));
    ++count;
  }
  auto out = new_node({}, 1);
  out->value[0] = count > 0 ? total / count : 0.0;
  auto ln = logits.node();
  Node* o = out.get();
  attach(out, {ln}, [o, ln, targets, ignore_index, N, C, count, probs = std::move(probs)]() {
    if (!ln->requires_grad || count == 0) return;
    const double g = o->grad[0] / count;
    for (int r = 0; r < N; ++r) {
      if (targets[r] == ignore_index) continue;
      double* dx = ln->grad.data() + static_cast<size_t>(r) * C;
      const double* pr = probs.data() + static_cast<size_t>(r) * C;
      for (int c = 0; c < C; ++c) dx[c] += g * (pr[c] - (c == targets[r] ? 1.0 : 0.0));
    }
  });
  return wrap(out);
}

Tensor bce_with_logits(const Tensor& logits, const std::vector<double>& labels,
                       const std::vector<double>& weights) {
  const size_t N = logits.size();
  if (labels.size() != N) throw ShapeError("bce_with_logits: label count mismatch");
  std::vector<double> w = weights.empty() ? std::vector<double>(N, 1.0) : weights;
  if (w.size() != N) throw ShapeError("bce_with_logits: weight count mismatch");
  double wsum = 0, total = 0;
  for (size_t i = 0; i < N; ++i) {
    if (w[i] <= 0) continue;
    const double z = logits.values()[i];
    total += w[i] * (std::max(z, 0.0) - z * labels[i] + std::log1p(std::exp(-std::abs(z))));
    wsum += w[i];
  }
  auto out = new_node({}, 1);
  out->value[0] = wsum > 0 ? total / wsum : 0.0;
  auto ln = logits.node();
  Node* o = out.get();
  attach(out, {ln}, [o, ln, labels, w = std::move(w), wsum]() {
    if (!ln->requires_grad || wsum <= 0) return;
    const double g = o->grad[0] / wsum;
    for (size_t i = 0; i < labels.size(); ++i) {
      if (w[i] <= 0) continue;
      const double s = 1.0 / (1.0 + std::exp(-ln->value[i]));
      ln->grad[i] += g * w[i] * (s - labels[i]);
    }
  });
  return wrap(out);
}

double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                  std::vector<Tensor> params, double h, int sample_per_tensor, uint64_t seed) {
  for (auto& p : params) p.node()->grad.assign(p.size(), 0.0);
  Tensor loss = f(params);
  if (loss.size() != 1) throw ContractError("grad_check: f must return a scalar");
  loss.backward();
  std::vector<std::vector<double>> analytic;
  for (const auto& p : params) {
    analytic.push_back(p.node()->grad.empty() ? std::vector<double>(p.size(), 0.0)
                                              : p.node()->grad);
  }
  std::mt19937_64 rng(seed);
  double max_rel = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& vals = params[pi].mutable_values();
    std::vector<size_t> indices;
    if (sample_per_tensor > 0 && vals.size() > static_cast<size_t>(sample_per_tensor)) {
      std::uniform_int_distribution<size_t> pick(0, vals.size() - 1);
      for (int k = 0; k < sample_per_tensor; ++k) indices.push_back(pick(rng));
    } else {
      indices.resize(vals.size());
      std::iota(indices.begin(), indices.end(), size_t{0});
    }
    for (size_t idx : indices) {
      const double orig = vals[idx];
      vals[idx] = orig + h;
      const double fp = f(params).item();
      vals[idx] = orig - h;
      const double fm = f(params).item();
      vals[idx] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[pi][idx];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace olab::nn
