#pragma once

#include <cstddef>
#include <cstdint>

namespace vltd::kernels {

// Row-major C = alpha * op(A) * op(B) + beta * C.
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, double alpha, const double* a,
          int64_t lda, const double* b, int64_t ldb, double beta, double* c, int64_t ldc);

// In-place exp for the whole range. Relative error below 1e-15 on [-708, 709];
// inputs below -708 flush to zero.
void exp_inplace(double* x, std::size_t n);

// Softmax attention for one head and all query rows, without materializing
// the score matrix. q rows are strided by ldq; kt and vt are [dk, m] with the
// 1/sqrt(dk) scale already folded into kt. Writes out rows (stride ldo) and
// the per-row log-sum-exp.
void attention_head_forward(const double* q, int64_t ldq, const double* kt, const double* vt, int64_t n,
                            int64_t m, int64_t dk, double* out, int64_t ldo, double* lse);

}  // namespace vltd::kernels
