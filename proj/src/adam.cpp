#include "ccv/adam.hpp"

#include <cmath>

#include "ccv/kernels.hpp"

namespace ccv {

void Adam::step(std::span<double> params, std::span<const double> grad, double lr) {
  require_dims(params.size() == m_.size() && grad.size() == m_.size(), "Adam::step: length mismatch");
  if (!all_finite(grad)) throw NumericError("Adam::step: non-finite gradient");
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const double step = lr * std::sqrt(c2) / c1;
  kernels::active().adam_update(params.data(), m_.data(), v_.data(), grad.data(), cfg_.beta1,
                                cfg_.beta2, step, cfg_.eps, params.size());
}

void Adam::restore(std::uint64_t steps, Vector m, Vector v) {
  require_dims(m.size() == m_.size() && v.size() == v_.size(), "Adam::restore: length mismatch");
  t_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

double clip_grad_norm(std::span<double> grad, double max_norm) {
  const double norm = std::sqrt(kernels::active().sum_sq(grad.data(), grad.size()));
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / (norm + 1e-12);
    for (double& g : grad) g *= s;
  }
  return norm;
}

}  // namespace ccv
