#pragma once

// Data-parallel f64 inner loops used by the MLP, estimators, baseline fitting
// and the PPO gradient assembly. Each kernel has a scalar reference
// implementation and an AVX2+FMA variant; the active table is chosen once at
// startup from the host CPU and may be overridden with CCV_SIMD=scalar|avx2.

#include <cstddef>
#include <string_view>
#include <vector>

namespace ccv::kernels {

enum class Isa { scalar, avx2 };

struct KernelTable {
  Isa isa;

  // sum_i x[i] * y[i]
  double (*dot)(const double* x, const double* y, std::size_t n);
  // y[i] += a * x[i]
  void (*axpy)(double a, const double* x, double* y, std::size_t n);
  // sum_i x[i]^2
  double (*sum_sq)(const double* x, std::size_t n);
  // acc[i] += x[i]^2
  void (*sq_accumulate)(const double* x, double* acc, std::size_t n);
  // out[i] = s[i] * (q - b[i])
  void (*residual_product)(const double* s, double q, const double* b, double* out,
                           std::size_t n);
  // Per-coordinate clipped PPO contribution of one sample:
  //   w = adv[j] >= 0 ? (ratio <= 1+eps) : (ratio >= 1-eps)
  //   out[j] += w ? scale * ratio * s[j] * adv[j] : 0
  // Returns the number of clipped coordinates.
  std::size_t (*clipped_coord_accumulate)(const double* s, const double* adv, double ratio,
                                          double eps, double scale, double* out, std::size_t n);
  // C[m x n] += A[m x k] * B[k x n], all row-major with leading dimensions.
  void (*gemm)(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
               const double* b, std::size_t ldb, double* c, std::size_t ldc);
  // C[m x n] += A[k x m]^T * B[k x n].
  void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                  const double* b, std::size_t ldb, double* c, std::size_t ldc);
  // C[m x n] += A[m x k] * B[n x k]^T.
  void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                  const double* b, std::size_t ldb, double* c, std::size_t ldc);
  // Baseline-loss residual for one sample over m outputs:
  //   r = q - c[k];  w = (1 - lambda) * wbar[k] + lambda
  //   grad[k] = share * 2 * (-r * w + rho * (c[k] - c_old[k]))
  // Returns sum_k share * (r^2 * w + rho * (c[k] - c_old[k])^2).
  // `share` is a single scalar applied to all k.
  double (*baseline_residual)(double q, const double* c, const double* c_old,
                              const double* wbar, double lambda, double rho, double share,
                              double* grad, std::size_t n);
  // Adam moment update and parameter step:
  //   m = b1 m + (1 - b1) g;  v = b2 v + (1 - b2) g^2;  p -= step * m / (sqrt(v) + eps)
  void (*adam_update)(double* p, double* m, double* v, const double* g, double b1, double b2,
                      double step, double eps, std::size_t n);
};

// Scalar reference table; always available.
const KernelTable& scalar_table();

// AVX2 table, or nullptr when the host lacks AVX2/FMA or the build excluded it.
const KernelTable* avx2_table();

// Table used by the rest of the library.
const KernelTable& active();

// Forces a particular table; returns false if unavailable on this host.
bool select(Isa isa);

std::string_view isa_name(Isa isa);

std::vector<Isa> available_isas();

}  // namespace ccv::kernels
