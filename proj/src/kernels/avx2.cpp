// Compiled with -mavx2 -mfma; only reached through the dispatch table after a
// runtime CPU check.

#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <bit>
#include <vector>

#include "kernels_impl.hpp"

namespace ccv::kernels::avx2 {
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

// MR x 8 block of C accumulated over k. Element (r, p) of A sits at
// a[r * ars + p * aps], so the same code serves A and A^T.
template <int MR>
void block8(std::size_t k, const double* a, std::size_t ars, std::size_t aps, const double* b,
            std::size_t ldb, double* c, std::size_t ldc) {
  __m256d lo[MR];
  __m256d hi[MR];
  for (int r = 0; r < MR; ++r) {
    lo[r] = _mm256_loadu_pd(c + r * ldc);
    hi[r] = _mm256_loadu_pd(c + r * ldc + 4);
  }
  for (std::size_t p = 0; p < k; ++p) {
    const __m256d b0 = _mm256_loadu_pd(b + p * ldb);
    const __m256d b1 = _mm256_loadu_pd(b + p * ldb + 4);
    const double* ap = a + p * aps;
    for (int r = 0; r < MR; ++r) {
      const __m256d ar = _mm256_broadcast_sd(ap + r * ars);
      lo[r] = _mm256_fmadd_pd(ar, b0, lo[r]);
      hi[r] = _mm256_fmadd_pd(ar, b1, hi[r]);
    }
  }
  for (int r = 0; r < MR; ++r) {
    _mm256_storeu_pd(c + r * ldc, lo[r]);
    _mm256_storeu_pd(c + r * ldc + 4, hi[r]);
  }
}

template <int MR>
void block4(std::size_t k, const double* a, std::size_t ars, std::size_t aps, const double* b,
            std::size_t ldb, double* c, std::size_t ldc) {
  __m256d acc[MR];
  for (int r = 0; r < MR; ++r) acc[r] = _mm256_loadu_pd(c + r * ldc);
  for (std::size_t p = 0; p < k; ++p) {
    const __m256d b0 = _mm256_loadu_pd(b + p * ldb);
    const double* ap = a + p * aps;
    for (int r = 0; r < MR; ++r) acc[r] = _mm256_fmadd_pd(_mm256_broadcast_sd(ap + r * ars), b0, acc[r]);
  }
  for (int r = 0; r < MR; ++r) _mm256_storeu_pd(c + r * ldc, acc[r]);
}

void rows8(std::size_t rows, std::size_t k, const double* a, std::size_t ars, std::size_t aps,
           const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  switch (rows) {
    case 1: block8<1>(k, a, ars, aps, b, ldb, c, ldc); break;
    case 2: block8<2>(k, a, ars, aps, b, ldb, c, ldc); break;
    case 3: block8<3>(k, a, ars, aps, b, ldb, c, ldc); break;
    default: block8<4>(k, a, ars, aps, b, ldb, c, ldc); break;
  }
}

void rows4(std::size_t rows, std::size_t k, const double* a, std::size_t ars, std::size_t aps,
           const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  switch (rows) {
    case 1: block4<1>(k, a, ars, aps, b, ldb, c, ldc); break;
    case 2: block4<2>(k, a, ars, aps, b, ldb, c, ldc); break;
    case 3: block4<3>(k, a, ars, aps, b, ldb, c, ldc); break;
    default: block4<4>(k, a, ars, aps, b, ldb, c, ldc); break;
  }
}

constexpr std::size_t kPanel = 256;

// C += A B over one k panel; B is row-major k x n with leading dimension ldb.
void panel(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t ars,
           std::size_t aps, const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8) {
    for (std::size_t i = 0; i < m; i += 4) {
      rows8(std::min<std::size_t>(4, m - i), k, a + i * ars, ars, aps, b + j, ldb, c + i * ldc + j, ldc);
    }
  }
  for (; j + 4 <= n; j += 4) {
    for (std::size_t i = 0; i < m; i += 4) {
      rows4(std::min<std::size_t>(4, m - i), k, a + i * ars, ars, aps, b + j, ldb, c + i * ldc + j, ldc);
    }
  }
  for (; j < n; ++j) {
    for (std::size_t i = 0; i < m; ++i) {
      double acc = c[i * ldc + j];
      for (std::size_t p = 0; p < k; ++p) acc += a[i * ars + p * aps] * b[p * ldb + j];
      c[i * ldc + j] = acc;
    }
  }
}

// Panels of k keep the A and B slices cache resident; C accumulates them in
// order, so every element sees the same sequence of FMAs as an unblocked pass.
void gemm_strided(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t ars,
                  std::size_t aps, const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  for (std::size_t p0 = 0; p0 < k; p0 += kPanel) {
    panel(m, n, std::min(kPanel, k - p0), a + p0 * aps, ars, aps, b + p0 * ldb, ldb, c, ldc);
  }
}

}  // namespace

void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
          const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  gemm_strided(m, n, k, a, lda, 1, b, ldb, c, ldc);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  gemm_strided(m, n, k, a, 1, lda, b, ldb, c, ldc);
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  // B^T is packed a column block at a time so the inner loops read it contiguously.
  constexpr std::size_t nb = 64;
  std::vector<double> packed(std::min(kPanel, k) * std::min(nb, n));
  for (std::size_t p0 = 0; p0 < k; p0 += kPanel) {
    const std::size_t kk = std::min(kPanel, k - p0);
    for (std::size_t j0 = 0; j0 < n; j0 += nb) {
      const std::size_t nn = std::min(nb, n - j0);
      for (std::size_t j = 0; j < nn; ++j) {
        const double* src = b + (j0 + j) * ldb + p0;
        for (std::size_t p = 0; p < kk; ++p) packed[p * nn + j] = src[p];
      }
      panel(m, nn, kk, a + p0, lda, 1, packed.data(), nn, c + j0, ldc);
    }
  }
}

double dot(const double* x, const double* y, std::size_t n) {
  __m256d a0 = _mm256_setzero_pd();
  __m256d a1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    a0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), a0);
    a1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), a1);
  }
  for (; i + 4 <= n; i += 4) {
    a0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), a0);
  }
  double acc = hsum(_mm256_add_pd(a0, a1));
  for (; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

void axpy(double a, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

double sum_sq(const double* x, std::size_t n) {
  __m256d a0 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d v = _mm256_loadu_pd(x + i);
    a0 = _mm256_fmadd_pd(v, v, a0);
  }
  double acc = hsum(a0);
  for (; i < n; ++i) acc += x[i] * x[i];
  return acc;
}

void sq_accumulate(const double* x, double* acc, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d v = _mm256_loadu_pd(x + i);
    _mm256_storeu_pd(acc + i, _mm256_fmadd_pd(v, v, _mm256_loadu_pd(acc + i)));
  }
  for (; i < n; ++i) acc[i] += x[i] * x[i];
}

void residual_product(const double* s, double q, const double* b, double* out, std::size_t n) {
  const __m256d vq = _mm256_set1_pd(q);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d r = _mm256_sub_pd(vq, _mm256_loadu_pd(b + i));
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(s + i), r));
  }
  for (; i < n; ++i) out[i] = s[i] * (q - b[i]);
}

std::size_t clipped_coord_accumulate(const double* s, const double* adv, double ratio, double eps,
                                     double scale, double* out, std::size_t n) {
  const bool keep_pos = ratio <= 1.0 + eps;
  const bool keep_neg = ratio >= 1.0 - eps;
  const double w = scale * ratio;
  const __m256d vw = _mm256_set1_pd(w);
  const __m256d zero = _mm256_setzero_pd();
  const __m256d all = _mm256_castsi256_pd(_mm256_set1_epi64x(-1));
  const __m256d kp = keep_pos ? all : zero;
  const __m256d kn = keep_neg ? all : zero;
  std::size_t clipped = 0;
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    const __m256d a = _mm256_loadu_pd(adv + j);
    const __m256d pos = _mm256_cmp_pd(a, zero, _CMP_GE_OQ);
    const __m256d keep = _mm256_or_pd(_mm256_and_pd(pos, kp), _mm256_andnot_pd(pos, kn));
    const __m256d contrib = _mm256_mul_pd(_mm256_mul_pd(vw, _mm256_loadu_pd(s + j)), a);
    _mm256_storeu_pd(out + j, _mm256_add_pd(_mm256_loadu_pd(out + j), _mm256_and_pd(keep, contrib)));
    clipped += 4 - static_cast<std::size_t>(std::popcount(static_cast<unsigned>(_mm256_movemask_pd(keep))));
  }
  for (; j < n; ++j) {
    const bool keep = adv[j] >= 0.0 ? keep_pos : keep_neg;
    if (keep) {
      out[j] += w * s[j] * adv[j];
    } else {
      ++clipped;
    }
  }
  return clipped;
}

double baseline_residual(double q, const double* c, const double* c_old, const double* wbar,
                         double lambda, double rho, double share, double* grad, std::size_t n) {
  const __m256d vq = _mm256_set1_pd(q);
  const __m256d vl = _mm256_set1_pd(lambda);
  const __m256d vml = _mm256_set1_pd(1.0 - lambda);
  const __m256d vrho = _mm256_set1_pd(rho);
  const __m256d vs = _mm256_set1_pd(share);
  const __m256d v2s = _mm256_set1_pd(2.0 * share);
  __m256d loss = _mm256_setzero_pd();
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    const __m256d ck = _mm256_loadu_pd(c + k);
    const __m256d r = _mm256_sub_pd(vq, ck);
    const __m256d w = _mm256_fmadd_pd(vml, _mm256_loadu_pd(wbar + k), vl);
    const __m256d p = _mm256_sub_pd(ck, _mm256_loadu_pd(c_old + k));
    const __m256d rw = _mm256_mul_pd(r, w);
    const __m256d rp = _mm256_mul_pd(vrho, p);
    _mm256_storeu_pd(grad + k, _mm256_mul_pd(v2s, _mm256_sub_pd(rp, rw)));
    loss = _mm256_fmadd_pd(vs, _mm256_fmadd_pd(rw, r, _mm256_mul_pd(rp, p)), loss);
  }
  double acc = hsum(loss);
  for (; k < n; ++k) {
    const double r = q - c[k];
    const double w = (1.0 - lambda) * wbar[k] + lambda;
    const double p = c[k] - c_old[k];
    grad[k] = share * 2.0 * (-r * w + rho * p);
    acc += share * (r * r * w + rho * p * p);
  }
  return acc;
}

void adam_update(double* p, double* m, double* v, const double* g, double b1, double b2,
                 double step, double eps, std::size_t n) {
  const __m256d vb1 = _mm256_set1_pd(b1);
  const __m256d vc1 = _mm256_set1_pd(1.0 - b1);
  const __m256d vb2 = _mm256_set1_pd(b2);
  const __m256d vc2 = _mm256_set1_pd(1.0 - b2);
  const __m256d vstep = _mm256_set1_pd(step);
  const __m256d veps = _mm256_set1_pd(eps);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d gi = _mm256_loadu_pd(g + i);
    const __m256d mi = _mm256_add_pd(_mm256_mul_pd(vb1, _mm256_loadu_pd(m + i)), _mm256_mul_pd(vc1, gi));
    const __m256d vi = _mm256_add_pd(_mm256_mul_pd(vb2, _mm256_loadu_pd(v + i)),
                                     _mm256_mul_pd(_mm256_mul_pd(vc2, gi), gi));
    const __m256d upd = _mm256_div_pd(_mm256_mul_pd(vstep, mi), _mm256_add_pd(_mm256_sqrt_pd(vi), veps));
    _mm256_storeu_pd(m + i, mi);
    _mm256_storeu_pd(v + i, vi);
    _mm256_storeu_pd(p + i, _mm256_sub_pd(_mm256_loadu_pd(p + i), upd));
  }
  for (; i < n; ++i) {
    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
    v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
    p[i] -= step * m[i] / (std::sqrt(v[i]) + eps);
  }
}

}  // namespace ccv::kernels::avx2
