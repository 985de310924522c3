#pragma once

#include <cstddef>

#include "ccv/kernels.hpp"

namespace ccv::kernels::scalar {
double dot(const double* x, const double* y, std::size_t n);
void axpy(double a, const double* x, double* y, std::size_t n);
double sum_sq(const double* x, std::size_t n);
void sq_accumulate(const double* x, double* acc, std::size_t n);
void residual_product(const double* s, double q, const double* b, double* out, std::size_t n);
std::size_t clipped_coord_accumulate(const double* s, const double* adv, double ratio, double eps,
                                     double scale, double* out, std::size_t n);
void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
          const double* b, std::size_t ldb, double* c, std::size_t ldc);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc);
double baseline_residual(double q, const double* c, const double* c_old, const double* wbar,
                         double lambda, double rho, double share, double* grad, std::size_t n);
void adam_update(double* p, double* m, double* v, const double* g, double b1, double b2,
                 double step, double eps, std::size_t n);
}  // namespace ccv::kernels::scalar

#if defined(CCV_HAVE_AVX2)
namespace ccv::kernels::avx2 {
double dot(const double* x, const double* y, std::size_t n);
void axpy(double a, const double* x, double* y, std::size_t n);
double sum_sq(const double* x, std::size_t n);
void sq_accumulate(const double* x, double* acc, std::size_t n);
void residual_product(const double* s, double q, const double* b, double* out, std::size_t n);
std::size_t clipped_coord_accumulate(const double* s, const double* adv, double ratio, double eps,
                                     double scale, double* out, std::size_t n);
void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
          const double* b, std::size_t ldb, double* c, std::size_t ldc);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc);
double baseline_residual(double q, const double* c, const double* c_old, const double* wbar,
                         double lambda, double rho, double share, double* grad, std::size_t n);
void adam_update(double* p, double* m, double* v, const double* g, double b1, double b2,
                 double step, double eps, std::size_t n);
}  // namespace ccv::kernels::avx2
#endif
