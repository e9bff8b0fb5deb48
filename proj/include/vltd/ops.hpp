#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vltd/tensor.hpp"

// Differentiable operations. Layout conventions: matrices are [rows, cols],
// feature maps are channel-first [C, H, W] for a single image.
namespace vltd::ops {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
// x[N, C] + v[C] broadcast over rows.
Tensor add_row_vector(const Tensor& x, const Tensor& v);
Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
// Sum of all elements, shape [1].
Tensor sum(const Tensor& x);
// Sum of x * w for a constant weight array; the usual probe for gradient checks.
Tensor weighted_total(const Tensor& x, std::span<const double> w);

Tensor matmul(const Tensor& a, const Tensor& b);
// x[N, in] * w[in, out] + b[out]; b may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor transpose(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// Softmax over axis 0 of a [K, M] tensor (each column is a distribution).
Tensor softmax_axis0(const Tensor& logits);
// out[c, p] = sum_k weights[k, p or 0] * candidates[k][c, p].
Tensor weighted_sum(const std::vector<Tensor>& candidates, const Tensor& weights);

// x[Cin, H, W], w[Cout, Cin, k, k], b[Cout] (optional).
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding);
// Bilinear resampling with half-pixel centers (align_corners = false).
Tensor resize_bilinear(const Tensor& x, int64_t out_h, int64_t out_w);
Tensor concat0(const Tensor& a, const Tensor& b);
// table[V, C] rows gathered by id -> [L, C].
Tensor embedding(const Tensor& table, std::span<const int32_t> ids);
// Rows [begin, end) of x[N, C].
Tensor slice_rows(const Tensor& x, int64_t begin, int64_t end);

struct AttentionOptions {
  int heads = 1;
  bool causal = false;
};

// Multi-head scaled dot-product attention on pre-projected q[N, D], k[M, D],
// v[M, D]; head h uses columns [h*D/H, (h+1)*D/H). Never materializes the full
// N x M matrix: the forward keeps only per-row log-sum-exp and the backward
// recomputes probabilities block by block.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionOptions& opts);

// Explicit softmax(q k^T / sqrt(d_k)) per head, [H][N*M]. Diagnostic path.
std::vector<std::vector<double>> attention_probabilities(const Tensor& q, const Tensor& k,
                                                         const AttentionOptions& opts);

enum class Reduction { kMean, kSum };

// Binary cross-entropy with logits over entries whose weight is nonzero.
// Mean divides by the number of counted entries; throws when none are counted.
Tensor bce_with_logits(const Tensor& logits, std::span<const double> targets, std::span<const double> weights,
                       Reduction reduction);

}  // namespace vltd::ops
