#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "ccv/linalg.hpp"
#include "ccv/mlp.hpp"
#include "ccv/rng.hpp"

namespace ccv {

enum class PolicyHead { gaussian, categorical };

// Log-std is clamped to this range before exponentiation.
inline constexpr double kMinLogStd = -20.0;
inline constexpr double kMaxLogStd = 2.0;

// n x d matrix; row i holds grad_theta log pi(a_i | s_i) in ParamLayout order.
using ScoreMatrix = Matrix;

// MLP policy. The Gaussian head uses a state-independent log-std vector; the
// categorical head (softmax over logits) exists for enumerable finite MDPs.
// Actions are vectors: continuous components for Gaussian, a single action
// index stored as a double for categorical.
class Policy {
 public:
  Policy() = default;

  static Policy gaussian(std::size_t obs_dim, std::size_t act_dim,
                         const std::vector<std::size_t>& hidden, Rng& rng,
                         double initial_log_std = 0.0, double hidden_gain = std::sqrt(2.0),
                         double output_gain = 0.01);
  static Policy categorical(std::size_t obs_dim, std::size_t num_actions,
                            const std::vector<std::size_t>& hidden, Rng& rng,
                            double hidden_gain = std::sqrt(2.0), double output_gain = 0.01);

  PolicyHead head() const { return head_; }
  std::size_t obs_dim() const { return net_.input_dim(); }
  // Length of an action vector.
  std::size_t action_dim() const { return head_ == PolicyHead::gaussian ? net_.output_dim() : 1; }
  std::size_t num_actions() const { return net_.output_dim(); }

  const ParamLayout& layout() const { return layout_; }
  std::size_t dim() const { return layout_.total_dim(); }

  Vector params() const;
  void set_params(std::span<const double> flat);

  const Mlp& net() const { return net_; }
  Mlp& mutable_net() { return net_; }
  const Vector& log_std() const { return log_std_; }
  void set_log_std(std::span<const double> v);

  // Gaussian mean, or categorical probabilities.
  Vector mean(std::span<const double> state) const;
  Vector probabilities(std::span<const double> state) const;

  double log_prob(std::span<const double> state, std::span<const double> action) const;
  Vector sample(std::span<const double> state, Rng& rng) const;
  double entropy(std::span<const double> state) const;

  // Writes grad_theta log pi(a|s) into `out` (length dim()).
  void score(std::span<const double> state, std::span<const double> action,
             std::span<double> out) const;

  // One forward pass over the batch and one backward per example. Throws
  // NumericError naming the first sample index whose activations are not finite.
  ScoreMatrix score_matrix(const Matrix& states, const Matrix& actions) const;
  // Same, reusing `out`'s storage and optionally writing log pi(a_i|s_i).
  void score_matrix_into(const Matrix& states, const Matrix& actions, ScoreMatrix& out,
                         Vector* log_probs = nullptr) const;

  // Log-probabilities for every row, batched.
  Vector log_probs(const Matrix& states, const Matrix& actions) const;

  // Gradient of the mean policy entropy over `states`, accumulated into `grad`.
  void entropy_gradient(const Matrix& states, double scale, std::span<double> grad) const;

 private:
  double sigma(std::size_t k) const;
  void rebuild_layout();

  PolicyHead head_ = PolicyHead::gaussian;
  Mlp net_;
  Vector log_std_;
  ParamLayout layout_;
};

}  // namespace ccv
