#include "kernels.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <iterator>
#include <vector>

#if defined(__AVX512F__)
#include <immintrin.h>
#define VLTD_EXP_AVX512 1
#elif defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>
#define VLTD_EXP_AVX2 1
#endif

namespace vltd::kernels {

void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, double alpha, const double* a,
          int64_t lda, const double* b, int64_t ldb, double beta, double* c, int64_t ldc) {
  if (m == 0 || n == 0) return;
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
              static_cast<blasint>(m), static_cast<blasint>(n), static_cast<blasint>(k), alpha, a,
              static_cast<blasint>(lda), b, static_cast<blasint>(ldb), beta, c, static_cast<blasint>(ldc));
}

namespace {

constexpr double kLog2e = 1.4426950408889634;
constexpr double kLn2Hi = 6.93147180369123816490e-01;
constexpr double kLn2Lo = 1.90821492927058770002e-10;
constexpr double kShifter = 6755399441055744.0;  // 1.5 * 2^52
constexpr double kMinArg = -708.0;
constexpr double kMaxArg = 709.0;

// Taylor coefficients 1/k!, highest order first. Degree 11 leaves a relative
// truncation error below 1e-14 for |r| <= ln2/2.
constexpr double kCoeff[] = {1.0 / 39916800.0, 1.0 / 3628800.0, 1.0 / 362880.0, 1.0 / 40320.0,
                             1.0 / 5040.0,     1.0 / 720.0,     1.0 / 120.0,    1.0 / 24.0,
                             1.0 / 6.0,        0.5,             1.0,            1.0};

inline double exp_scalar(double x) {
  const bool underflow = x < kMinArg;
  if (x < kMinArg) x = kMinArg;
  if (x > kMaxArg) x = kMaxArg;
  // Round-to-nearest via the shifter; the low mantissa bits then hold n.
  const double shifted = x * kLog2e + kShifter;
  const double n = shifted - kShifter;
  const double r = (x - n * kLn2Hi) - n * kLn2Lo;
  double p = kCoeff[0];
  for (size_t i = 1; i < std::size(kCoeff); ++i) p = p * r + kCoeff[i];
  int64_t bits;
  std::memcpy(&bits, &shifted, sizeof bits);
  const int64_t ebits = ((bits - 0x4338000000000000LL) + 1023) << 52;
  double scale;
  std::memcpy(&scale, &ebits, sizeof scale);
  return underflow ? 0.0 : p * scale;
}

#ifdef VLTD_EXP_AVX2
inline __m256d exp_avx2(__m256d x) {
  const __m256d keep = _mm256_cmp_pd(x, _mm256_set1_pd(kMinArg), _CMP_GE_OQ);
  x = _mm256_min_pd(_mm256_max_pd(x, _mm256_set1_pd(kMinArg)), _mm256_set1_pd(kMaxArg));
  const __m256d shifted = _mm256_fmadd_pd(x, _mm256_set1_pd(kLog2e), _mm256_set1_pd(kShifter));
  const __m256d n = _mm256_sub_pd(shifted, _mm256_set1_pd(kShifter));
  __m256d r = _mm256_fnmadd_pd(n, _mm256_set1_pd(kLn2Hi), x);
  r = _mm256_fnmadd_pd(n, _mm256_set1_pd(kLn2Lo), r);
  __m256d p = _mm256_set1_pd(kCoeff[0]);
  for (size_t i = 1; i < std::size(kCoeff); ++i) p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(kCoeff[i]));
  __m256i bits = _mm256_castpd_si256(shifted);
  bits = _mm256_sub_epi64(bits, _mm256_set1_epi64x(0x4338000000000000LL - 1023));
  const __m256d scale = _mm256_castsi256_pd(_mm256_slli_epi64(bits, 52));
  return _mm256_and_pd(_mm256_mul_pd(p, scale), keep);
}
#endif

#ifdef VLTD_EXP_AVX512
inline __m512d exp_avx512(__m512d x) {
  const __mmask8 keep = _mm512_cmp_pd_mask(x, _mm512_set1_pd(kMinArg), _CMP_GE_OQ);
  x = _mm512_min_pd(_mm512_max_pd(x, _mm512_set1_pd(kMinArg)), _mm512_set1_pd(kMaxArg));
  const __m512d shifted = _mm512_fmadd_pd(x, _mm512_set1_pd(kLog2e), _mm512_set1_pd(kShifter));
  const __m512d n = _mm512_sub_pd(shifted, _mm512_set1_pd(kShifter));
  __m512d r = _mm512_fnmadd_pd(n, _mm512_set1_pd(kLn2Hi), x);
  r = _mm512_fnmadd_pd(n, _mm512_set1_pd(kLn2Lo), r);
  __m512d p = _mm512_set1_pd(kCoeff[0]);
  for (size_t i = 1; i < std::size(kCoeff); ++i) p = _mm512_fmadd_pd(p, r, _mm512_set1_pd(kCoeff[i]));
  __m512i bits = _mm512_castpd_si512(shifted);
  bits = _mm512_sub_epi64(bits, _mm512_set1_epi64(0x4338000000000000LL - 1023));
  const __m512d scale = _mm512_castsi512_pd(_mm512_slli_epi64(bits, 52));
  return _mm512_maskz_mul_pd(keep, p, scale);
}
#endif

}  // namespace

void exp_inplace(double* x, std::size_t n) {
  std::size_t i = 0;
#ifdef VLTD_EXP_AVX512
  for (; i + 16 <= n; i += 16) {
    const __m512d a = exp_avx512(_mm512_loadu_pd(x + i));
    const __m512d b = exp_avx512(_mm512_loadu_pd(x + i + 8));
    _mm512_storeu_pd(x + i, a);
    _mm512_storeu_pd(x + i + 8, b);
  }
  for (; i + 8 <= n; i += 8) _mm512_storeu_pd(x + i, exp_avx512(_mm512_loadu_pd(x + i)));
#endif
#ifdef VLTD_EXP_AVX2
  // Four independent chains hide the FMA latency of the polynomial.
  for (; i + 16 <= n; i += 16) {
    const __m256d a = exp_avx2(_mm256_loadu_pd(x + i));
    const __m256d b = exp_avx2(_mm256_loadu_pd(x + i + 4));
    const __m256d c = exp_avx2(_mm256_loadu_pd(x + i + 8));
    const __m256d d = exp_avx2(_mm256_loadu_pd(x + i + 12));
    _mm256_storeu_pd(x + i, a);
    _mm256_storeu_pd(x + i + 4, b);
    _mm256_storeu_pd(x + i + 8, c);
    _mm256_storeu_pd(x + i + 12, d);
  }
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(x + i, exp_avx2(_mm256_loadu_pd(x + i)));
#endif
  for (; i < n; ++i) x[i] = exp_scalar(x[i]);
}

namespace {

constexpr int kRowGroup = 4;

#ifdef VLTD_EXP_AVX512

inline double hmax(__m512d v) { return _mm512_reduce_max_pd(v); }

template <int DK>
void score_rows_fixed(const double* const* qr, const double* kt, int64_t m, double* s, __m512d* mx) {
  __m512d qb[4][DK];
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < DK; ++c) qb[r][c] = _mm512_set1_pd(qr[r][c]);
  for (int64_t j = 0; j + 8 <= m; j += 8) {
    __m512d a0 = _mm512_setzero_pd(), a1 = a0, a2 = a0, a3 = a0;
    for (int c = 0; c < DK; ++c) {
      const __m512d kv = _mm512_loadu_pd(kt + c * m + j);
      a0 = _mm512_fmadd_pd(qb[0][c], kv, a0);
      a1 = _mm512_fmadd_pd(qb[1][c], kv, a1);
      a2 = _mm512_fmadd_pd(qb[2][c], kv, a2);
      a3 = _mm512_fmadd_pd(qb[3][c], kv, a3);
    }
    _mm512_storeu_pd(s + j, a0);
    _mm512_storeu_pd(s + m + j, a1);
    _mm512_storeu_pd(s + 2 * m + j, a2);
    _mm512_storeu_pd(s + 3 * m + j, a3);
    mx[0] = _mm512_max_pd(mx[0], a0);
    mx[1] = _mm512_max_pd(mx[1], a1);
    mx[2] = _mm512_max_pd(mx[2], a2);
    mx[3] = _mm512_max_pd(mx[3], a3);
  }
}

// Scores for up to four rows; returns per-row maxima.
void score_rows(const double* const* qr, int rows, const double* kt, int64_t m, int64_t dk, double* s,
                double* row_max) {
  __m512d mx[kRowGroup];
  for (auto& v : mx) v = _mm512_set1_pd(-HUGE_VAL);
  int64_t j = 0;
  if (dk == 8) {
    score_rows_fixed<8>(qr, kt, m, s, mx);
    j = m - m % 8;
  } else if (dk == 4) {
    score_rows_fixed<4>(qr, kt, m, s, mx);
    j = m - m % 8;
  } else {
    for (; j + 8 <= m; j += 8) {
      __m512d acc[kRowGroup] = {_mm512_setzero_pd(), _mm512_setzero_pd(), _mm512_setzero_pd(),
                                _mm512_setzero_pd()};
      for (int64_t c = 0; c < dk; ++c) {
        const __m512d kv = _mm512_loadu_pd(kt + c * m + j);
        for (int r = 0; r < kRowGroup; ++r) acc[r] = _mm512_fmadd_pd(_mm512_set1_pd(qr[r][c]), kv, acc[r]);
      }
      for (int r = 0; r < kRowGroup; ++r) {
        _mm512_storeu_pd(s + r * m + j, acc[r]);
        mx[r] = _mm512_max_pd(mx[r], acc[r]);
      }
    }
  }
  for (int r = 0; r < rows; ++r) row_max[r] = hmax(mx[r]);
  for (; j < m; ++j) {
    for (int r = 0; r < kRowGroup; ++r) {
      double a = 0.0;
      for (int64_t c = 0; c < dk; ++c) a += qr[r][c] * kt[c * m + j];
      s[r * m + j] = a;
      if (r < rows) row_max[r] = std::max(row_max[r], a);
    }
  }
}

// row <- exp(row - mx); returns the sum.
double exp_shift_sum(double* row, int64_t m, double mx) {
  const __m512d shift = _mm512_set1_pd(mx);
  __m512d total = _mm512_setzero_pd(), total2 = _mm512_setzero_pd();
  int64_t j = 0;
  for (; j + 16 <= m; j += 16) {
    const __m512d e0 = exp_avx512(_mm512_sub_pd(_mm512_loadu_pd(row + j), shift));
    const __m512d e1 = exp_avx512(_mm512_sub_pd(_mm512_loadu_pd(row + j + 8), shift));
    _mm512_storeu_pd(row + j, e0);
    _mm512_storeu_pd(row + j + 8, e1);
    total = _mm512_add_pd(total, e0);
    total2 = _mm512_add_pd(total2, e1);
  }
  total = _mm512_add_pd(total, total2);
  for (; j + 8 <= m; j += 8) {
    const __m512d e = exp_avx512(_mm512_sub_pd(_mm512_loadu_pd(row + j), shift));
    _mm512_storeu_pd(row + j, e);
    total = _mm512_add_pd(total, e);
  }
  double t = _mm512_reduce_add_pd(total);
  for (; j < m; ++j) t += (row[j] = exp_scalar(row[j] - mx));
  return t;
}

// out[r][c0 + cc] = sum_j p[r][j] * vt[c0 + cc][j] for two rows and 8 channels.
void weighted_values8(const double* p0, const double* p1, const double* vt, int64_t m, int64_t c0, double* o0,
                      double* o1) {
  __m512d a0[8], a1[8];
  for (int cc = 0; cc < 8; ++cc) a0[cc] = a1[cc] = _mm512_setzero_pd();
  int64_t j = 0;
  for (; j + 8 <= m; j += 8) {
    const __m512d x0 = _mm512_loadu_pd(p0 + j);
    const __m512d x1 = _mm512_loadu_pd(p1 + j);
    for (int cc = 0; cc < 8; ++cc) {
      const __m512d v = _mm512_loadu_pd(vt + (c0 + cc) * m + j);
      a0[cc] = _mm512_fmadd_pd(x0, v, a0[cc]);
      a1[cc] = _mm512_fmadd_pd(x1, v, a1[cc]);
    }
  }
  for (int cc = 0; cc < 8; ++cc) {
    double s0 = _mm512_reduce_add_pd(a0[cc]);
    double s1 = _mm512_reduce_add_pd(a1[cc]);
    for (int64_t jj = j; jj < m; ++jj) {
      s0 += p0[jj] * vt[(c0 + cc) * m + jj];
      s1 += p1[jj] * vt[(c0 + cc) * m + jj];
    }
    o0[cc] = s0;
    o1[cc] = s1;
  }
}

#else

void score_rows(const double* const* qr, int rows, const double* kt, int64_t m, int64_t dk, double* s,
                double* row_max) {
  for (int r = 0; r < rows; ++r) {
    double mx = -HUGE_VAL;
    for (int64_t j = 0; j < m; ++j) s[r * m + j] = 0.0;
    for (int64_t c = 0; c < dk; ++c) {
      const double qc = qr[r][c];
      const double* k = kt + c * m;
      double* row = s + r * m;
      for (int64_t j = 0; j < m; ++j) row[j] += qc * k[j];
    }
    for (int64_t j = 0; j < m; ++j) mx = std::max(mx, s[r * m + j]);
    row_max[r] = mx;
  }
}

double exp_shift_sum(double* row, int64_t m, double mx) {
  for (int64_t j = 0; j < m; ++j) row[j] -= mx;
  exp_inplace(row, static_cast<std::size_t>(m));
  double t = 0.0;
  for (int64_t j = 0; j < m; ++j) t += row[j];
  return t;
}

#endif

// out[r][c] = sum_j p[r][j] * vt[c][j] for the first `rows` rows of p (row stride m).
void value_rows(const double* p, int rows, const double* vt, int64_t m, int64_t dk, double* out) {
#ifdef VLTD_EXP_AVX512
  if (dk % 8 == 0) {
    for (int r = 0; r < rows; r += 2) {
      const double* p0 = p + r * m;
      const double* p1 = p + (r + 1 < rows ? r + 1 : r) * m;
      double o1[8];
      for (int64_t c0 = 0; c0 < dk; c0 += 8) {
        weighted_values8(p0, p1, vt, m, c0, out + r * dk + c0, o1);
        if (r + 1 < rows) std::copy(o1, o1 + 8, out + (r + 1) * dk + c0);
      }
    }
    return;
  }
#endif
  for (int r = 0; r < rows; ++r) {
    const double* pr = p + r * m;
    for (int64_t c = 0; c < dk; ++c) {
      const double* v = vt + c * m;
      double a = 0.0;
      for (int64_t j = 0; j < m; ++j) a += pr[j] * v[j];
      out[r * dk + c] = a;
    }
  }
}

}  // namespace

void attention_head_forward(const double* q, int64_t ldq, const double* kt, const double* vt, int64_t n,
                            int64_t m, int64_t dk, double* out, int64_t ldo, double* lse) {
  constexpr int64_t kRowBlock = 64;
  constexpr int64_t kKeyTile = 512;
  std::vector<double> s(static_cast<size_t>(kRowGroup * kKeyTile));
  std::vector<double> ktile(static_cast<size_t>(dk * kKeyTile)), vtile(static_cast<size_t>(dk * kKeyTile));
  std::vector<double> zero_row(static_cast<size_t>(dk), 0.0);
  std::vector<double> acc(static_cast<size_t>(kRowBlock * dk)), tile_out(static_cast<size_t>(kRowGroup * dk));
  std::vector<double> run_max(kRowBlock), run_sum(kRowBlock);

  for (int64_t b0 = 0; b0 < n; b0 += kRowBlock) {
    const int64_t block_rows = std::min(kRowBlock, n - b0);
    std::fill(acc.begin(), acc.end(), 0.0);
    std::fill(run_max.begin(), run_max.end(), -HUGE_VAL);
    std::fill(run_sum.begin(), run_sum.end(), 0.0);
    for (int64_t t0 = 0; t0 < m; t0 += kKeyTile) {
      const int64_t tw = std::min(kKeyTile, m - t0);
      for (int64_t c = 0; c < dk; ++c) {
        std::memcpy(ktile.data() + c * tw, kt + c * m + t0, sizeof(double) * tw);
        std::memcpy(vtile.data() + c * tw, vt + c * m + t0, sizeof(double) * tw);
      }
      for (int64_t g0 = 0; g0 < block_rows; g0 += kRowGroup) {
        const int rows = static_cast<int>(std::min<int64_t>(kRowGroup, block_rows - g0));
        const double* qr[kRowGroup];
        for (int r = 0; r < kRowGroup; ++r) qr[r] = r < rows ? q + (b0 + g0 + r) * ldq : zero_row.data();
        double tile_max[kRowGroup];
        score_rows(qr, rows, ktile.data(), tw, dk, s.data(), tile_max);
        double alpha[kRowGroup] = {0, 0, 0, 0};
        for (int r = 0; r < rows; ++r) {
          double& mx = run_max[g0 + r];
          const double new_max = std::max(mx, tile_max[r]);
          alpha[r] = mx == -HUGE_VAL ? 0.0 : std::exp(mx - new_max);
          mx = new_max;
          run_sum[g0 + r] = run_sum[g0 + r] * alpha[r] + exp_shift_sum(s.data() + r * tw, tw, new_max);
        }
        value_rows(s.data(), rows, vtile.data(), tw, dk, tile_out.data());
        for (int r = 0; r < rows; ++r) {
          double* a = acc.data() + (g0 + r) * dk;
          const double* t = tile_out.data() + r * dk;
          for (int64_t c = 0; c < dk; ++c) a[c] = a[c] * alpha[r] + t[c];
        }
      }
    }
    for (int64_t r = 0; r < block_rows; ++r) {
      const double inv = 1.0 / run_sum[r];
      for (int64_t c = 0; c < dk; ++c) out[(b0 + r) * ldo + c] = acc[r * dk + c] * inv;
      lse[b0 + r] = run_max[r] + std::log(run_sum[r]);
    }
  }
}

}  // namespace vltd::kernels
