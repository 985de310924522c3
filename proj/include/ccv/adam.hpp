#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

#include "ccv/linalg.hpp"

namespace ccv {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-5;
};

// Adam on a flat parameter vector, minimizing. Callers that maximize pass the
// negated gradient.
class Adam {
 public:
  Adam() = default;
  explicit Adam(std::size_t dim, AdamConfig cfg = {}) : cfg_(cfg), m_(dim, 0.0), v_(dim, 0.0) {}

  void step(std::span<double> params, std::span<const double> grad, double lr);

  std::size_t dim() const { return m_.size(); }
  std::uint64_t steps() const { return t_; }
  const Vector& first_moment() const { return m_; }
  const Vector& second_moment() const { return v_; }
  const AdamConfig& config() const { return cfg_; }

  void restore(std::uint64_t steps, Vector m, Vector v);

 private:
  AdamConfig cfg_;
  Vector m_;
  Vector v_;
  std::uint64_t t_ = 0;
};

// Rescales `grad` in place so its L2 norm is at most `max_norm`; returns the
// norm before clipping. max_norm <= 0 disables clipping.
double clip_grad_norm(std::span<double> grad, double max_norm);

}  // namespace ccv
