#include "vltd/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

#include "kernels.hpp"

namespace vltd::ops {

using detail::make_result;
using detail::Node;

namespace {

std::vector<double>* grad_of(const Tensor& t) { return t.requires_grad() ? &t.node()->ensure_grad() : nullptr; }

void require(bool cond, const std::string& what) {
  if (!cond) throw std::invalid_argument(what);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(),
          std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void require_rank(const Tensor& t, int rank, const char* op) {
  require(t.rank() == rank, std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                                shape_str(t.shape()));
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
  const auto& xv = x.values();
  std::vector<double> out(xv.size());
  for (size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  return make_result(x.shape(), std::move(out), {x}, [x, deriv](Node& self) {
    auto* gx = grad_of(x);
    if (!gx) return;
    const auto& xv = x.values();
    for (size_t i = 0; i < xv.size(); ++i) (*gx)[i] += self.grad[i] * deriv(xv[i], self.value[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.values());
  const auto& bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [a, b](Node& self) {
    for (const Tensor* t : {&a, &b}) {
      if (auto* g = grad_of(*t)) {
        for (size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.values());
  const auto& bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [a, b](Node& self) {
    if (auto* g = grad_of(a)) {
      for (size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
    if (auto* g = grad_of(b)) {
      for (size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.values());
  const auto& bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [a, b](Node& self) {
    if (auto* g = grad_of(a)) {
      const auto& bv = b.values();
      for (size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * bv[i];
    }
    if (auto* g = grad_of(b)) {
      const auto& av = a.values();
      for (size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  return unary(a, [s](double v) { return v * s; }, [s](double, double) { return s; });
}

Tensor add_row_vector(const Tensor& x, const Tensor& v) {
  require_rank(x, 2, "add_row_vector");
  const int64_t n = x.dim(0), c = x.dim(1);
  require(v.numel() == c, "add_row_vector: vector length " + std::to_string(v.numel()) + " != " +
                              std::to_string(c));
  std::vector<double> out(x.values());
  const auto& vv = v.values();
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < c; ++j) out[i * c + j] += vv[j];
  return make_result(x.shape(), std::move(out), {x, v}, [x, v, n, c](Node& self) {
    if (auto* g = grad_of(x)) {
      for (size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
    if (auto* g = grad_of(v)) {
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < c; ++j) (*g)[j] += self.grad[i * c + j];
    }
  });
}

Tensor relu(const Tensor& x) {
  return unary(x, [](double v) { return v > 0 ? v : 0.0; }, [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  const double kInvSqrt2Pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
  return unary(
      x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
      [kInvSqrt2Pi](double v, double) {
        return 0.5 * (1.0 + std::erf(v * kInvSqrt2)) + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  return make_result({1}, {total}, {x}, [x](Node& self) {
    if (auto* g = grad_of(x)) {
      for (double& gi : *g) gi += self.grad[0];
    }
  });
}

Tensor weighted_total(const Tensor& x, std::span<const double> w) {
  require(static_cast<int64_t>(w.size()) == x.numel(), "weighted_total: weight count mismatch");
  double total = 0.0;
  const auto& xv = x.values();
  for (size_t i = 0; i < xv.size(); ++i) total += xv[i] * w[i];
  std::vector<double> weights(w.begin(), w.end());
  return make_result({1}, {total}, {x}, [x, weights = std::move(weights)](Node& self) {
    if (auto* g = grad_of(x)) {
      for (size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[0] * weights[i];
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  require(b.dim(0) == k, "matmul: inner dimension mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<double> out(static_cast<size_t>(m * n), 0.0);
  kernels::gemm(false, false, m, n, k, 1.0, a.values().data(), k, b.values().data(), n, 0.0, out.data(), n);
  return make_result({m, n}, std::move(out), {a, b}, [a, b, m, k, n](Node& self) {
    if (auto* g = grad_of(a)) {
      kernels::gemm(false, true, m, k, n, 1.0, self.grad.data(), n, b.values().data(), n, 1.0, g->data(), k);
    }
    if (auto* g = grad_of(b)) {
      kernels::gemm(true, false, k, n, m, 1.0, a.values().data(), k, self.grad.data(), n, 1.0, g->data(), n);
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor y = matmul(x, w);
  return b.defined() ? add_row_vector(y, b) : y;
}

Tensor transpose(const Tensor& x) {
  require_rank(x, 2, "transpose");
  const int64_t r = x.dim(0), c = x.dim(1);
  std::vector<double> out(static_cast<size_t>(r * c));
  const auto& xv = x.values();
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) out[j * r + i] = xv[i * c + j];
  return make_result({c, r}, std::move(out), {x}, [x, r, c](Node& self) {
    if (auto* g = grad_of(x)) {
      for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) (*g)[i * c + j] += self.grad[j * r + i];
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank(x, 2, "layer_norm");
  const int64_t n = x.dim(0), c = x.dim(1);
  require(gamma.numel() == c && beta.numel() == c, "layer_norm: affine size mismatch");
  const auto& xv = x.values();
  const auto& gv = gamma.values();
  const auto& bv = beta.values();
  std::vector<double> out(xv.size());
  std::vector<double> xhat(xv.size());
  std::vector<double> rstd(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const double* row = xv.data() + i * c;
    double mean = 0.0;
    for (int64_t j = 0; j < c; ++j) mean += row[j];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (int64_t j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(c);
    const double rs = 1.0 / std::sqrt(var + eps);
    rstd[i] = rs;
    for (int64_t j = 0; j < c; ++j) {
      const double h = (row[j] - mean) * rs;
      xhat[i * c + j] = h;
      out[i * c + j] = h * gv[j] + bv[j];
    }
  }
  return make_result(x.shape(), std::move(out), {x, gamma, beta},
                     [x, gamma, beta, n, c, xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
                       auto* gx = grad_of(x);
                       auto* gg = grad_of(gamma);
                       auto* gb = grad_of(beta);
                       const auto& gv = gamma.values();
                       std::vector<double> dxhat(static_cast<size_t>(c));
                       for (int64_t i = 0; i < n; ++i) {
                         const double* dy = self.grad.data() + i * c;
                         const double* h = xhat.data() + i * c;
                         if (gg)
                           for (int64_t j = 0; j < c; ++j) (*gg)[j] += dy[j] * h[j];
                         if (gb)
                           for (int64_t j = 0; j < c; ++j) (*gb)[j] += dy[j];
                         if (!gx) continue;
                         double mean_d = 0.0, mean_dh = 0.0;
                         for (int64_t j = 0; j < c; ++j) {
                           dxhat[j] = dy[j] * gv[j];
                           mean_d += dxhat[j];
                           mean_dh += dxhat[j] * h[j];
                         }
                         mean_d /= static_cast<double>(c);
                         mean_dh /= static_cast<double>(c);
                         for (int64_t j = 0; j < c; ++j)
                           (*gx)[i * c + j] += rstd[i] * (dxhat[j] - mean_d - h[j] * mean_dh);
                       }
                     });
}

Tensor softmax_axis0(const Tensor& logits) {
  require(logits.rank() == 1 || logits.rank() == 2, "softmax_axis0: expected [K] or [K, M]");
  const int64_t k = logits.dim(0);
  const int64_t m = logits.rank() == 2 ? logits.dim(1) : 1;
  require(k > 0, "softmax_axis0: empty axis");
  const auto& lv = logits.values();
  std::vector<double> out(lv.size());
  for (int64_t p = 0; p < m; ++p) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t i = 0; i < k; ++i) mx = std::max(mx, lv[i * m + p]);
    double total = 0.0;
    for (int64_t i = 0; i < k; ++i) total += (out[i * m + p] = std::exp(lv[i * m + p] - mx));
    for (int64_t i = 0; i < k; ++i) out[i * m + p] /= total;
  }
  return make_result(logits.shape(), std::move(out), {logits}, [logits, k, m](Node& self) {
    auto* g = grad_of(logits);
    if (!g) return;
    for (int64_t p = 0; p < m; ++p) {
      double dot = 0.0;
      for (int64_t i = 0; i < k; ++i) dot += self.grad[i * m + p] * self.value[i * m + p];
      for (int64_t i = 0; i < k; ++i) (*g)[i * m + p] += self.value[i * m + p] * (self.grad[i * m + p] - dot);
    }
  });
}

Tensor weighted_sum(const std::vector<Tensor>& candidates, const Tensor& weights) {
  require(!candidates.empty(), "weighted_sum: no candidates");
  const int64_t k = static_cast<int64_t>(candidates.size());
  for (const auto& c : candidates) require_same_shape(c, candidates.front(), "weighted_sum");
  require(weights.dim(0) == k, "weighted_sum: weight count " + std::to_string(weights.dim(0)) + " != " +
                                   std::to_string(k) + " candidates");
  const Tensor& first = candidates.front();
  // Spatial extent: trailing [H, W] for feature maps, everything for flat inputs.
  const int64_t spatial = first.rank() == 3 ? first.dim(1) * first.dim(2) : first.numel();
  const int64_t channels = first.numel() / spatial;
  const int64_t m = weights.numel() / k;
  require(m == 1 || m == spatial, "weighted_sum: weights must be [K] or [K, spatial]");
  const auto& wv = weights.values();
  std::vector<double> out(static_cast<size_t>(first.numel()), 0.0);
  for (int64_t i = 0; i < k; ++i) {
    const auto& cv = candidates[i].values();
    for (int64_t ch = 0; ch < channels; ++ch)
      for (int64_t p = 0; p < spatial; ++p)
        out[ch * spatial + p] += wv[i * m + (m == 1 ? 0 : p)] * cv[ch * spatial + p];
  }
  std::vector<Tensor> inputs(candidates);
  inputs.push_back(weights);
  return make_result(first.shape(), std::move(out), inputs,
                     [candidates, weights, k, m, spatial, channels](Node& self) {
                       const auto& wv = weights.values();
                       auto* gw = grad_of(weights);
                       for (int64_t i = 0; i < k; ++i) {
                         const auto& cv = candidates[i].values();
                         auto* gc = grad_of(candidates[i]);
                         for (int64_t ch = 0; ch < channels; ++ch) {
                           for (int64_t p = 0; p < spatial; ++p) {
                             const int64_t idx = ch * spatial + p;
                             const int64_t widx = i * m + (m == 1 ? 0 : p);
                             if (gc) (*gc)[idx] += self.grad[idx] * wv[widx];
                             if (gw) (*gw)[widx] += self.grad[idx] * cv[idx];
                           }
                         }
                       }
                     });
}

namespace {

struct ConvGeometry {
  int64_t cin, h, w, cout, k, ho, wo;
  int stride, pad;
};

void im2col(const double* x, const ConvGeometry& g, double* col) {
  const int64_t plane = g.ho * g.wo;
  for (int64_t ci = 0; ci < g.cin; ++ci) {
    for (int64_t ky = 0; ky < g.k; ++ky) {
      for (int64_t kx = 0; kx < g.k; ++kx) {
        double* dst = col + ((ci * g.k + ky) * g.k + kx) * plane;
        for (int64_t oy = 0; oy < g.ho; ++oy) {
          const int64_t iy = oy * g.stride - g.pad + ky;
          double* row = dst + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(row, row + g.wo, 0.0);
            continue;
          }
          const double* src = x + (ci * g.h + iy) * g.w;
          for (int64_t ox = 0; ox < g.wo; ++ox) {
            const int64_t ix = ox * g.stride - g.pad + kx;
            row[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* col, const ConvGeometry& g, double* dx) {
  const int64_t plane = g.ho * g.wo;
  for (int64_t ci = 0; ci < g.cin; ++ci) {
    for (int64_t ky = 0; ky < g.k; ++ky) {
      for (int64_t kx = 0; kx < g.k; ++kx) {
        const double* src = col + ((ci * g.k + ky) * g.k + kx) * plane;
        for (int64_t oy = 0; oy < g.ho; ++oy) {
          const int64_t iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          double* dst = dx + (ci * g.h + iy) * g.w;
          const double* row = src + oy * g.wo;
          for (int64_t ox = 0; ox < g.wo; ++ox) {
            const int64_t ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.w) dst[ix] += row[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding) {
  require_rank(x, 3, "conv2d input");
  require_rank(w, 4, "conv2d weight");
  require(stride >= 1 && padding >= 0, "conv2d: invalid stride/padding");
  ConvGeometry g{};
  g.cin = x.dim(0);
  g.h = x.dim(1);
  g.w = x.dim(2);
  g.cout = w.dim(0);
  g.k = w.dim(2);
  require(w.dim(1) == g.cin && w.dim(3) == g.k,
          "conv2d: weight " + shape_str(w.shape()) + " incompatible with input " + shape_str(x.shape()));
  g.stride = stride;
  g.pad = padding;
  g.ho = (g.h + 2 * padding - g.k) / stride + 1;
  g.wo = (g.w + 2 * padding - g.k) / stride + 1;
  require(g.ho > 0 && g.wo > 0, "conv2d: output would be empty");
  if (b.defined()) require(b.numel() == g.cout, "conv2d: bias size mismatch");

  const int64_t plane = g.ho * g.wo;
  const int64_t kdim = g.cin * g.k * g.k;
  std::vector<double> col(static_cast<size_t>(kdim * plane));
  im2col(x.values().data(), g, col.data());
  std::vector<double> out(static_cast<size_t>(g.cout * plane), 0.0);
  if (b.defined()) {
    const auto& bv = b.values();
    for (int64_t co = 0; co < g.cout; ++co) std::fill_n(out.data() + co * plane, plane, bv[co]);
  }
  kernels::gemm(false, false, g.cout, plane, kdim, 1.0, w.values().data(), kdim, col.data(), plane,
                b.defined() ? 1.0 : 0.0, out.data(), plane);

  const bool record = grad_enabled() && (x.requires_grad() || w.requires_grad() || b.requires_grad());
  if (!record) col.clear();
  std::vector<Tensor> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  return make_result({g.cout, g.ho, g.wo}, std::move(out), inputs,
                     [x, w, b, g, plane, kdim, col = std::move(col)](Node& self) {
                       if (auto* gw = grad_of(w)) {
                         kernels::gemm(false, true, g.cout, kdim, plane, 1.0, self.grad.data(), plane, col.data(),
                                       plane, 1.0, gw->data(), kdim);
                       }
                       if (b.defined()) {
                         if (auto* gb = grad_of(b)) {
                           for (int64_t co = 0; co < g.cout; ++co) {
                             double s = 0.0;
                             for (int64_t p = 0; p < plane; ++p) s += self.grad[co * plane + p];
                             (*gb)[co] += s;
                           }
                         }
                       }
                       if (auto* gx = grad_of(x)) {
                         std::vector<double> dcol(static_cast<size_t>(kdim * plane), 0.0);
                         kernels::gemm(true, false, kdim, plane, g.cout, 1.0, w.values().data(), kdim,
                                       self.grad.data(), plane, 0.0, dcol.data(), plane);
                         col2im(dcol.data(), g, gx->data());
                       }
                     });
}

namespace {

struct AxisTaps {
  std::vector<int64_t> i0, i1;
  std::vector<double> w1;  // weight of i1; i0 gets 1 - w1
};

AxisTaps bilinear_taps(int64_t in, int64_t out) {
  AxisTaps t;
  t.i0.resize(out);
  t.i1.resize(out);
  t.w1.resize(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (int64_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    if (src < 0) src = 0;
    int64_t lo = static_cast<int64_t>(src);
    if (lo > in - 1) lo = in - 1;
    const int64_t hi = std::min(lo + 1, in - 1);
    t.i0[o] = lo;
    t.i1[o] = hi;
    t.w1[o] = hi == lo ? 0.0 : src - static_cast<double>(lo);
  }
  return t;
}

}  // namespace

Tensor resize_bilinear(const Tensor& x, int64_t out_h, int64_t out_w) {
  require_rank(x, 3, "resize_bilinear");
  require(out_h > 0 && out_w > 0, "resize_bilinear: empty output");
  const int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h == out_h && w == out_w) return x;
  const AxisTaps ty = bilinear_taps(h, out_h);
  const AxisTaps tx = bilinear_taps(w, out_w);
  const auto& xv = x.values();
  std::vector<double> out(static_cast<size_t>(c * out_h * out_w));
  for (int64_t ch = 0; ch < c; ++ch) {
    const double* src = xv.data() + ch * h * w;
    double* dst = out.data() + ch * out_h * out_w;
    for (int64_t oy = 0; oy < out_h; ++oy) {
      const double* r0 = src + ty.i0[oy] * w;
      const double* r1 = src + ty.i1[oy] * w;
      const double wy = ty.w1[oy];
      for (int64_t ox = 0; ox < out_w; ++ox) {
        const double wx = tx.w1[ox];
        const double top = r0[tx.i0[ox]] * (1 - wx) + r0[tx.i1[ox]] * wx;
        const double bot = r1[tx.i0[ox]] * (1 - wx) + r1[tx.i1[ox]] * wx;
        dst[oy * out_w + ox] = top * (1 - wy) + bot * wy;
      }
    }
  }
  return make_result({c, out_h, out_w}, std::move(out), {x}, [x, c, h, w, out_h, out_w, ty, tx](Node& self) {
    auto* g = grad_of(x);
    if (!g) return;
    for (int64_t ch = 0; ch < c; ++ch) {
      double* dst = g->data() + ch * h * w;
      const double* go = self.grad.data() + ch * out_h * out_w;
      for (int64_t oy = 0; oy < out_h; ++oy) {
        const double wy = ty.w1[oy];
        double* r0 = dst + ty.i0[oy] * w;
        double* r1 = dst + ty.i1[oy] * w;
        for (int64_t ox = 0; ox < out_w; ++ox) {
          const double v = go[oy * out_w + ox];
          const double wx = tx.w1[ox];
          r0[tx.i0[ox]] += v * (1 - wy) * (1 - wx);
          r0[tx.i1[ox]] += v * (1 - wy) * wx;
          r1[tx.i0[ox]] += v * wy * (1 - wx);
          r1[tx.i1[ox]] += v * wy * wx;
        }
      }
    }
  });
}

Tensor concat0(const Tensor& a, const Tensor& b) {
  require(a.rank() == b.rank(), "concat0: rank mismatch");
  Shape shape = a.shape();
  for (int i = 1; i < a.rank(); ++i)
    require(a.dim(i) == b.dim(i), "concat0: trailing shape mismatch " + shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
  shape[0] += b.dim(0);
  std::vector<double> out;
  out.reserve(static_cast<size_t>(a.numel() + b.numel()));
  out.insert(out.end(), a.values().begin(), a.values().end());
  out.insert(out.end(), b.values().begin(), b.values().end());
  const size_t split = a.values().size();
  return make_result(std::move(shape), std::move(out), {a, b}, [a, b, split](Node& self) {
    if (auto* g = grad_of(a))
      for (size_t i = 0; i < split; ++i) (*g)[i] += self.grad[i];
    if (auto* g = grad_of(b))
      for (size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[split + i];
  });
}

Tensor embedding(const Tensor& table, std::span<const int32_t> ids) {
  require_rank(table, 2, "embedding");
  const int64_t v = table.dim(0), c = table.dim(1);
  const int64_t n = static_cast<int64_t>(ids.size());
  std::vector<int32_t> idx(ids.begin(), ids.end());
  std::vector<double> out(static_cast<size_t>(n * c));
  const auto& tv = table.values();
  for (int64_t i = 0; i < n; ++i) {
    require(idx[i] >= 0 && idx[i] < v, "embedding: id " + std::to_string(idx[i]) + " outside table of " +
                                           std::to_string(v));
    std::copy_n(tv.data() + idx[i] * c, c, out.data() + i * c);
  }
  return make_result({n, c}, std::move(out), {table}, [table, idx = std::move(idx), c](Node& self) {
    auto* g = grad_of(table);
    if (!g) return;
    for (size_t i = 0; i < idx.size(); ++i)
      for (int64_t j = 0; j < c; ++j) (*g)[idx[i] * c + j] += self.grad[i * c + j];
  });
}

Tensor slice_rows(const Tensor& x, int64_t begin, int64_t end) {
  require_rank(x, 2, "slice_rows");
  const int64_t c = x.dim(1);
  require(0 <= begin && begin < end && end <= x.dim(0), "slice_rows: bad range");
  std::vector<double> out(x.values().begin() + begin * c, x.values().begin() + end * c);
  return make_result({end - begin, c}, std::move(out), {x}, [x, begin, c](Node& self) {
    if (auto* g = grad_of(x))
      for (size_t i = 0; i < self.grad.size(); ++i) (*g)[begin * c + i] += self.grad[i];
  });
}

namespace {

constexpr int64_t kScoreBudget = int64_t{1} << 18;  // doubles per score block

struct AttentionDims {
  int64_t n, m, d, heads, dk;
  double scale;
  bool causal;
};

AttentionDims attention_dims(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionOptions& opts) {
  require_rank(q, 2, "attention q");
  require_rank(k, 2, "attention k");
  require_rank(v, 2, "attention v");
  AttentionDims a{};
  a.n = q.dim(0);
  a.m = k.dim(0);
  a.d = q.dim(1);
  a.heads = opts.heads;
  require(a.m > 0, "attention: empty key/value sequence");
  require(k.dim(1) == a.d && v.dim(1) == a.d && v.dim(0) == a.m,
          "attention: q/k/v shapes disagree: " + shape_str(q.shape()) + ", " + shape_str(k.shape()) + ", " +
              shape_str(v.shape()));
  require(a.heads >= 1 && a.d % a.heads == 0, "attention: model dim " + std::to_string(a.d) +
                                                  " not divisible by " + std::to_string(a.heads) + " heads");
  require(!opts.causal || a.n == a.m, "attention: causal mask needs equal query/key lengths");
  a.dk = a.d / a.heads;
  a.scale = 1.0 / std::sqrt(static_cast<double>(a.dk));
  a.causal = opts.causal;
  return a;
}

// Fills s[rows x m] with scaled scores for query rows [r0, r0+rows) of head h.
void head_scores(const AttentionDims& a, const double* q, const double* k, int64_t h, int64_t r0, int64_t rows,
                 double* s) {
  kernels::gemm(false, true, rows, a.m, a.dk, a.scale, q + r0 * a.d + h * a.dk, a.d, k + h * a.dk, a.d, 0.0, s,
                a.m);
}

inline int64_t valid_keys(const AttentionDims& a, int64_t row) { return a.causal ? row + 1 : a.m; }

}  // namespace

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionOptions& opts) {
  const AttentionDims a = attention_dims(q, k, v, opts);
  const int64_t block = std::max<int64_t>(1, std::min<int64_t>(a.n, kScoreBudget / a.m));
  std::vector<double> out(static_cast<size_t>(a.n * a.d), 0.0);
  std::vector<double> lse(static_cast<size_t>(a.heads * a.n));
  std::vector<double> s(opts.causal ? static_cast<size_t>(block * a.m) : 0);
  const double* qv = q.values().data();
  const double* kv = k.values().data();
  const double* vv = v.values().data();

  if (!opts.causal) {
    std::vector<double> kt(static_cast<size_t>(a.dk * a.m)), vt(static_cast<size_t>(a.dk * a.m));
    for (int64_t h = 0; h < a.heads; ++h) {
      for (int64_t j = 0; j < a.m; ++j)
        for (int64_t c = 0; c < a.dk; ++c) {
          kt[c * a.m + j] = kv[j * a.d + h * a.dk + c] * a.scale;
          vt[c * a.m + j] = vv[j * a.d + h * a.dk + c];
        }
      kernels::attention_head_forward(qv + h * a.dk, a.d, kt.data(), vt.data(), a.n, a.m, a.dk,
                                      out.data() + h * a.dk, a.d, lse.data() + h * a.n);
    }
  }
  for (int64_t h = 0; h < a.heads && opts.causal; ++h) {
    for (int64_t r0 = 0; r0 < a.n; r0 += block) {
      const int64_t rows = std::min(block, a.n - r0);
      head_scores(a, qv, kv, h, r0, rows, s.data());
      for (int64_t i = 0; i < rows; ++i) {
        double* row = s.data() + i * a.m;
        const int64_t valid = valid_keys(a, r0 + i);
        double mx = row[0];
        for (int64_t j = 1; j < valid; ++j) mx = std::max(mx, row[j]);
        for (int64_t j = 0; j < valid; ++j) row[j] -= mx;
        kernels::exp_inplace(row, static_cast<size_t>(valid));
        std::fill(row + valid, row + a.m, 0.0);
        double total = 0.0;
        for (int64_t j = 0; j < valid; ++j) total += row[j];
        const double inv = 1.0 / total;
        for (int64_t j = 0; j < valid; ++j) row[j] *= inv;
        lse[h * a.n + r0 + i] = mx + std::log(total);
      }
      kernels::gemm(false, false, rows, a.dk, a.m, 1.0, s.data(), a.m, vv + h * a.dk, a.d, 0.0,
                    out.data() + r0 * a.d + h * a.dk, a.d);
    }
  }

  return make_result({a.n, a.d}, std::move(out), {q, k, v}, [q, k, v, a, block, lse = std::move(lse)](Node& self) {
    auto* gq = grad_of(q);
    auto* gk = grad_of(k);
    auto* gv = grad_of(v);
    const double* qv = q.values().data();
    const double* kv = k.values().data();
    const double* vv = v.values().data();
    const double* go = self.grad.data();
    const double* o = self.value.data();
    std::vector<double> p(static_cast<size_t>(block * a.m));
    std::vector<double> dp(static_cast<size_t>(block * a.m));
    for (int64_t h = 0; h < a.heads; ++h) {
      for (int64_t r0 = 0; r0 < a.n; r0 += block) {
        const int64_t rows = std::min(block, a.n - r0);
        head_scores(a, qv, kv, h, r0, rows, p.data());
        for (int64_t i = 0; i < rows; ++i) {
          double* row = p.data() + i * a.m;
          const int64_t valid = valid_keys(a, r0 + i);
          const double l = lse[h * a.n + r0 + i];
          for (int64_t j = 0; j < valid; ++j) row[j] -= l;
          kernels::exp_inplace(row, static_cast<size_t>(valid));
          std::fill(row + valid, row + a.m, 0.0);
        }
        const double* go_blk = go + r0 * a.d + h * a.dk;
        if (gv) {
          kernels::gemm(true, false, a.m, a.dk, rows, 1.0, p.data(), a.m, go_blk, a.d, 1.0, gv->data() + h * a.dk,
                        a.d);
        }
        if (!gq && !gk) continue;
        kernels::gemm(false, true, rows, a.m, a.dk, 1.0, go_blk, a.d, vv + h * a.dk, a.d, 0.0, dp.data(), a.m);
        for (int64_t i = 0; i < rows; ++i) {
          const double* gi = go_blk + i * a.d;
          const double* oi = o + (r0 + i) * a.d + h * a.dk;
          double di = 0.0;
          for (int64_t c = 0; c < a.dk; ++c) di += gi[c] * oi[c];
          double* prow = p.data() + i * a.m;
          const double* dprow = dp.data() + i * a.m;
          // p becomes dS in place.
          for (int64_t j = 0; j < a.m; ++j) prow[j] *= dprow[j] - di;
        }
        if (gq) {
          kernels::gemm(false, false, rows, a.dk, a.m, a.scale, p.data(), a.m, kv + h * a.dk, a.d, 1.0,
                        gq->data() + r0 * a.d + h * a.dk, a.d);
        }
        if (gk) {
          kernels::gemm(true, false, a.m, a.dk, rows, a.scale, p.data(), a.m, qv + r0 * a.d + h * a.dk, a.d, 1.0,
                        gk->data() + h * a.dk, a.d);
        }
      }
    }
  });
}

std::vector<std::vector<double>> attention_probabilities(const Tensor& q, const Tensor& k,
                                                         const AttentionOptions& opts) {
  const AttentionDims a = attention_dims(q, k, k, opts);
  const auto& qv = q.values();
  const auto& kv = k.values();
  std::vector<std::vector<double>> probs(static_cast<size_t>(a.heads),
                                         std::vector<double>(static_cast<size_t>(a.n * a.m), 0.0));
  std::vector<double> row(static_cast<size_t>(a.m));
  for (int64_t h = 0; h < a.heads; ++h) {
    for (int64_t i = 0; i < a.n; ++i) {
      const int64_t valid = valid_keys(a, i);
      double mx = -std::numeric_limits<double>::infinity();
      for (int64_t j = 0; j < valid; ++j) {
        double dot = 0.0;
        for (int64_t c = 0; c < a.dk; ++c) dot += qv[i * a.d + h * a.dk + c] * kv[j * a.d + h * a.dk + c];
        row[j] = dot * a.scale;
        mx = std::max(mx, row[j]);
      }
      double total = 0.0;
      for (int64_t j = 0; j < valid; ++j) total += (row[j] = std::exp(row[j] - mx));
      for (int64_t j = 0; j < valid; ++j) probs[h][i * a.m + j] = row[j] / total;
    }
  }
  return probs;
}

Tensor bce_with_logits(const Tensor& logits, std::span<const double> targets, std::span<const double> weights,
                       Reduction reduction) {
  const auto& x = logits.values();
  require(targets.size() == x.size() && weights.size() == x.size(), "bce_with_logits: size mismatch");
  double counted = 0.0;
  double total = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    if (weights[i] == 0.0) continue;
    counted += weights[i];
    // max(x, 0) - x*y + log(1 + exp(-|x|)) is stable for any x.
    total += weights[i] * (std::max(x[i], 0.0) - x[i] * targets[i] + std::log1p(std::exp(-std::abs(x[i]))));
  }
  if (counted == 0.0) throw std::domain_error("bce_with_logits: every entry is ignored; loss undefined");
  const double denom = reduction == Reduction::kMean ? counted : 1.0;
  std::vector<double> t(targets.begin(), targets.end());
  std::vector<double> w(weights.begin(), weights.end());
  return make_result({1}, {total / denom}, {logits},
                     [logits, t = std::move(t), w = std::move(w), denom](Node& self) {
                       auto* g = grad_of(logits);
                       if (!g) return;
                       const auto& x = logits.values();
                       const double up = self.grad[0] / denom;
                       for (size_t i = 0; i < x.size(); ++i) {
                         if (w[i] == 0.0) continue;
                         const double sig = x[i] >= 0 ? 1.0 / (1.0 + std::exp(-x[i]))
                                                      : std::exp(x[i]) / (1.0 + std::exp(x[i]));
                         (*g)[i] += up * w[i] * (sig - t[i]);
                       }
                     });
}

}  // namespace vltd::ops
