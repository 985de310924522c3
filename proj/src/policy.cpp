#include "ccv/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace ccv {
namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * log(2 pi)

double clamp_log_std(double v) { return std::clamp(v, kMinLogStd, kMaxLogStd); }
bool log_std_active(double v) { return v >= kMinLogStd && v <= kMaxLogStd; }

Vector softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  Vector p(logits.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    p[k] = std::exp(logits[k] - mx);
    sum += p[k];
  }
  for (double& v : p) v /= sum;
  return p;
}

double log_sum_exp(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - mx);
  return mx + std::log(sum);
}

std::size_t action_index(std::span<const double> action, std::size_t num_actions) {
  require_dims(action.size() == 1, "categorical action must have length 1");
  const double a = action[0];
  const auto idx = static_cast<long long>(std::llround(a));
  require_dims(idx >= 0 && static_cast<std::size_t>(idx) < num_actions && a == static_cast<double>(idx),
               "categorical action index out of range");
  return static_cast<std::size_t>(idx);
}

}  // namespace

Policy Policy::gaussian(std::size_t obs_dim, std::size_t act_dim,
                        const std::vector<std::size_t>& hidden, Rng& rng, double initial_log_std,
                        double hidden_gain, double output_gain) {
  std::vector<std::size_t> sizes{obs_dim};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(act_dim);
  Policy p;
  p.head_ = PolicyHead::gaussian;
  p.net_ = Mlp::initialized(std::move(sizes), rng, hidden_gain, output_gain);
  p.log_std_.assign(act_dim, initial_log_std);
  p.rebuild_layout();
  return p;
}

Policy Policy::categorical(std::size_t obs_dim, std::size_t num_actions,
                           const std::vector<std::size_t>& hidden, Rng& rng, double hidden_gain,
                           double output_gain) {
  require_dims(num_actions >= 2, "categorical policy needs at least two actions");
  std::vector<std::size_t> sizes{obs_dim};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(num_actions);
  Policy p;
  p.head_ = PolicyHead::categorical;
  p.net_ = Mlp::initialized(std::move(sizes), rng, hidden_gain, output_gain);
  p.rebuild_layout();
  return p;
}

void Policy::rebuild_layout() {
  layout_ = net_.layout();
  if (head_ == PolicyHead::gaussian) layout_.append("log_std", log_std_.size());
}

Vector Policy::params() const {
  Vector flat(net_.params().begin(), net_.params().end());
  flat.insert(flat.end(), log_std_.begin(), log_std_.end());
  return flat;
}

void Policy::set_params(std::span<const double> flat) {
  unflatten(layout_, flat, net_, log_std_);
}

void Policy::set_log_std(std::span<const double> v) {
  require_dims(head_ == PolicyHead::gaussian && v.size() == log_std_.size(),
               "set_log_std: shape mismatch");
  log_std_.assign(v.begin(), v.end());
}

double Policy::sigma(std::size_t k) const { return std::exp(clamp_log_std(log_std_[k])); }

Vector Policy::mean(std::span<const double> state) const {
  const Tape tape = forward(net_, state);
  return Vector(tape.output().begin(), tape.output().end());
}

Vector Policy::probabilities(std::span<const double> state) const {
  require_dims(head_ == PolicyHead::categorical, "probabilities: not a categorical policy");
  return softmax(forward(net_, state).output());
}

double Policy::log_prob(std::span<const double> state, std::span<const double> action) const {
  const Tape tape = forward(net_, state);
  const auto out = tape.output();
  if (head_ == PolicyHead::categorical) {
    const std::size_t a = action_index(action, out.size());
    return out[a] - log_sum_exp(out);
  }
  require_dims(action.size() == out.size(), "log_prob: action length != action dim");
  double lp = 0.0;
  for (std::size_t k = 0; k < out.size(); ++k) {
    const double ls = clamp_log_std(log_std_[k]);
    const double z = (action[k] - out[k]) / std::exp(ls);
    lp += -0.5 * z * z - ls - kHalfLog2Pi;
  }
  return lp;
}

Vector Policy::sample(std::span<const double> state, Rng& rng) const {
  const Tape tape = forward(net_, state);
  const auto out = tape.output();
  if (head_ == PolicyHead::categorical) {
    const Vector p = softmax(out);
    const double u = rng.uniform();
    double acc = 0.0;
    std::size_t a = p.size() - 1;
    for (std::size_t k = 0; k < p.size(); ++k) {
      acc += p[k];
      if (u < acc) {
        a = k;
        break;
      }
    }
    return {static_cast<double>(a)};
  }
  Vector a(out.size());
  for (std::size_t k = 0; k < out.size(); ++k) a[k] = out[k] + sigma(k) * rng.normal();
  return a;
}

double Policy::entropy(std::span<const double> state) const {
  if (head_ == PolicyHead::gaussian) {
    double h = 0.0;
    for (double ls : log_std_) h += clamp_log_std(ls) + kHalfLog2Pi + 0.5;
    return h;
  }
  const Vector p = softmax(forward(net_, state).output());
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

void Policy::score(std::span<const double> state, std::span<const double> action,
                   std::span<double> out) const {
  require_dims(out.size() == dim(), "score: output length != policy dim");
  std::fill(out.begin(), out.end(), 0.0);
  const Tape tape = forward(net_, state);
  const auto mu = tape.output();
  Vector seed(mu.size());
  if (head_ == PolicyHead::categorical) {
    const std::size_t a = action_index(action, mu.size());
    seed = softmax(mu);
    for (double& v : seed) v = -v;
    seed[a] += 1.0;
  } else {
    require_dims(action.size() == mu.size(), "score: action length != action dim");
    const std::size_t base = net_.param_count();
    for (std::size_t k = 0; k < mu.size(); ++k) {
      const double s = sigma(k);
      const double diff = action[k] - mu[k];
      seed[k] = diff / (s * s);
      out[base + k] = log_std_active(log_std_[k]) ? diff * diff / (s * s) - 1.0 : 0.0;
    }
  }
  backward_accumulate(net_, tape, seed, out.first(net_.param_count()));
}

ScoreMatrix Policy::score_matrix(const Matrix& states, const Matrix& actions) const {
  ScoreMatrix scores;
  score_matrix_into(states, actions, scores);
  return scores;
}

void Policy::score_matrix_into(const Matrix& states, const Matrix& actions, ScoreMatrix& scores,
                               Vector* log_probs) const {
  const std::size_t n = states.rows();
  require_dims(n >= 1, "score_matrix: need at least one sample");
  require_dims(actions.rows() == n && actions.cols() == action_dim(),
               "score_matrix: actions shape mismatch");
  BatchTape tape;
  try {
    tape = forward_batch(net_, states);
  } catch (const NumericError&) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        (void)forward(net_, states.row(i));
      } catch (const NumericError&) {
        throw NumericError("score_matrix: non-finite activations at sample " + std::to_string(i));
      }
    }
    throw;
  }
  const Matrix& out = tape.output();
  const std::size_t m = out.cols();
  Matrix seeds(n, m);
  scores.resize(n, dim());
  if (log_probs != nullptr) log_probs->assign(n, 0.0);
  const std::size_t base = net_.param_count();
  for (std::size_t i = 0; i < n; ++i) {
    auto mu = out.row(i);
    auto a = actions.row(i);
    auto seed = seeds.row(i);
    if (head_ == PolicyHead::categorical) {
      const std::size_t idx = action_index(a, m);
      const Vector p = softmax(mu);
      for (std::size_t k = 0; k < m; ++k) seed[k] = -p[k];
      seed[idx] += 1.0;
      if (log_probs != nullptr) (*log_probs)[i] = mu[idx] - log_sum_exp(mu);
    } else {
      double lp = 0.0;
      for (std::size_t k = 0; k < m; ++k) {
        const double s = sigma(k);
        const double diff = a[k] - mu[k];
        seed[k] = diff / (s * s);
        scores(i, base + k) = log_std_active(log_std_[k]) ? diff * diff / (s * s) - 1.0 : 0.0;
        const double ls = clamp_log_std(log_std_[k]);
        const double z = diff / std::exp(ls);
        lp += -0.5 * z * z - ls - kHalfLog2Pi;
      }
      if (log_probs != nullptr) (*log_probs)[i] = lp;
    }
  }
  backward_rows(net_, tape, seeds, scores, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!all_finite(scores.row(i))) {
      throw NumericError("score_matrix: non-finite score at sample " + std::to_string(i));
    }
  }
}

Vector Policy::log_probs(const Matrix& states, const Matrix& actions) const {
  const std::size_t n = states.rows();
  require_dims(actions.rows() == n && actions.cols() == action_dim(),
               "log_probs: actions shape mismatch");
  const BatchTape tape = forward_batch(net_, states);
  const Matrix& out = tape.output();
  Vector lp(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto mu = out.row(i);
    auto a = actions.row(i);
    if (head_ == PolicyHead::categorical) {
      lp[i] = mu[action_index(a, mu.size())] - log_sum_exp(mu);
      continue;
    }
    double acc = 0.0;
    for (std::size_t k = 0; k < mu.size(); ++k) {
      const double ls = clamp_log_std(log_std_[k]);
      const double z = (a[k] - mu[k]) / std::exp(ls);
      acc += -0.5 * z * z - ls - kHalfLog2Pi;
    }
    lp[i] = acc;
  }
  return lp;
}

void Policy::entropy_gradient(const Matrix& states, double scale, std::span<double> grad) const {
  require_dims(grad.size() == dim(), "entropy_gradient: length mismatch");
  if (head_ == PolicyHead::gaussian) {
    const std::size_t base = net_.param_count();
    for (std::size_t k = 0; k < log_std_.size(); ++k) {
      if (log_std_active(log_std_[k])) grad[base + k] += scale;
    }
    return;
  }
  const std::size_t n = states.rows();
  if (n == 0) return;
  const BatchTape tape = forward_batch(net_, states);
  const Matrix& out = tape.output();
  Matrix seeds(n, out.cols());
  for (std::size_t i = 0; i < n; ++i) {
    const Vector p = softmax(out.row(i));
    double h = 0.0;
    for (double v : p) {
      if (v > 0.0) h -= v * std::log(v);
    }
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double lp = p[k] > 0.0 ? std::log(p[k]) : 0.0;
      seeds(i, k) = -scale * p[k] * (lp + h) / static_cast<double>(n);
    }
  }
  backward_batch(net_, tape, seeds, grad.first(net_.param_count()));
}

}  // namespace ccv
