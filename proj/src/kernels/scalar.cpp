#include <cmath>

#include "kernels_impl.hpp"

namespace ccv::kernels::scalar {

double dot(const double* x, const double* y, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

void axpy(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

double sum_sq(const double* x, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * x[i];
  return acc;
}

void sq_accumulate(const double* x, double* acc, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) acc[i] += x[i] * x[i];
}

void residual_product(const double* s, double q, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = s[i] * (q - b[i]);
}

std::size_t clipped_coord_accumulate(const double* s, const double* adv, double ratio, double eps,
                                     double scale, double* out, std::size_t n) {
  const bool keep_pos = ratio <= 1.0 + eps;
  const bool keep_neg = ratio >= 1.0 - eps;
  const double w = scale * ratio;
  std::size_t clipped = 0;
  for (std::size_t j = 0; j < n; ++j) {
    const bool keep = adv[j] >= 0.0 ? keep_pos : keep_neg;
    if (keep) {
      out[j] += w * s[j] * adv[j];
    } else {
      ++clipped;
    }
  }
  return clipped;
}

void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
          const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * ldc;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * lda + p];
      const double* bp = b + p * ldb;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * ldc;
    for (std::size_t p = 0; p < k; ++p) {
      const double api = a[p * lda + i];
      const double* bp = b + p * ldb;
      for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = c[i * ldc + j];
      for (std::size_t p = 0; p < k; ++p) acc += a[i * lda + p] * b[j * ldb + p];
      c[i * ldc + j] = acc;
    }
  }
}

double baseline_residual(double q, const double* c, const double* c_old, const double* wbar,
                         double lambda, double rho, double share, double* grad, std::size_t n) {
  double loss = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double r = q - c[k];
    const double w = (1.0 - lambda) * wbar[k] + lambda;
    const double p = c[k] - c_old[k];
    grad[k] = share * 2.0 * (-r * w + rho * p);
    loss += share * (r * r * w + rho * p * p);
  }
  return loss;
}

void adam_update(double* p, double* m, double* v, const double* g, double b1, double b2,
                 double step, double eps, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
    v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
    p[i] -= step * m[i] / (std::sqrt(v[i]) + eps);
  }
}

}  // namespace ccv::kernels::scalar
