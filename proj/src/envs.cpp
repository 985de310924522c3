#include "ccv/envs.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <stdexcept>

#include "ccv/serialize.hpp"

namespace ccv {
namespace {

double angle_normalize(double x) {
  const double two_pi = 2.0 * std::numbers::pi;
  double y = std::fmod(x + std::numbers::pi, two_pi);
  if (y < 0.0) y += two_pi;
  return y - std::numbers::pi;
}

}  // namespace

// --- point_mass --------------------------------------------------------------

Vector PointMass::reset(Rng& rng) const {
  return {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), 0.0, 0.0};
}

StepResult PointMass::step(std::span<const double> state, std::span<const double> action,
                           Rng&) const {
  require_dims(state.size() == 4 && action.size() == 2, "point_mass: bad state/action size");
  const double ax = std::clamp(action[0], -1.0, 1.0);
  const double ay = std::clamp(action[1], -1.0, 1.0);
  const double px = state[0];
  const double py = state[1];
  const double reward = -((px * px + py * py) + kActionCost * (ax * ax + ay * ay));
  const double vx = kDamping * state[2] + kDt * ax;
  const double vy = kDamping * state[3] + kDt * ay;
  return {{px + kDt * vx, py + kDt * vy, vx, vy}, reward, false};
}

// --- pendulum ----------------------------------------------------------------

namespace {
constexpr double kMaxSpeed = 8.0;
constexpr double kMaxTorque = 2.0;
constexpr double kPendulumDt = 0.05;
constexpr double kGravity = 10.0;
}  // namespace

Vector Pendulum::observe(double th, double th_dot) { return {std::cos(th), std::sin(th), th_dot}; }

Vector Pendulum::reset(Rng& rng) const {
  return observe(rng.uniform(-std::numbers::pi, std::numbers::pi), rng.uniform(-1.0, 1.0));
}

StepResult Pendulum::step(std::span<const double> state, std::span<const double> action, Rng&) const {
  require_dims(state.size() == 3 && action.size() == 1, "pendulum: bad state/action size");
  const double th = std::atan2(state[1], state[0]);
  const double th_dot = state[2];
  const double u = std::clamp(action[0], -kMaxTorque, kMaxTorque);
  const double an = angle_normalize(th);
  const double cost = an * an + 0.1 * th_dot * th_dot + 0.001 * u * u;
  double new_dot = th_dot + (3.0 * kGravity / 2.0 * std::sin(th) + 3.0 * u) * kPendulumDt;
  new_dot = std::clamp(new_dot, -kMaxSpeed, kMaxSpeed);
  const double new_th = th + new_dot * kPendulumDt;
  return {observe(new_th, new_dot), -cost, false};
}

// --- chain_mdp ---------------------------------------------------------------

ChainMdp::ChainMdp(std::size_t num_states, std::size_t num_actions, std::size_t horizon)
    : horizon_(horizon) {
  if (num_states < 2 || num_actions < 2 || horizon < 1) {
    throw std::invalid_argument("chain_mdp: need >= 2 states, >= 2 actions, horizon >= 1");
  }
  const std::size_t k = num_states;
  const std::size_t m = num_actions;
  model_.num_states = k;
  model_.num_actions = m;
  model_.start.assign(k, 0.0);
  model_.start[0] = 1.0;
  model_.reward = Matrix(k, m);
  model_.next.resize(k * m);
  for (std::size_t s = 0; s < k; ++s) {
    for (std::size_t a = 0; a < m; ++a) {
      model_.reward(s, a) = static_cast<double>(s) / static_cast<double>(k - 1);
      std::size_t target = s;
      if (a == 0) target = std::min(s + 1, k - 1);
      if (a == 1) target = s == 0 ? 0 : s - 1;
      auto& out = model_.next[s * m + a];
      if (target == s) {
        out.emplace_back(s, 1.0);
      } else {
        out.emplace_back(target, kMoveProb);
        out.emplace_back(s, 1.0 - kMoveProb);
      }
    }
  }
}

Vector ChainMdp::one_hot(std::size_t s) const {
  Vector v(model_.num_states, 0.0);
  v.at(s) = 1.0;
  return v;
}

std::size_t ChainMdp::state_index(std::span<const double> obs) {
  const auto it = std::max_element(obs.begin(), obs.end());
  return static_cast<std::size_t>(it - obs.begin());
}

Vector ChainMdp::reset(Rng& rng) const {
  double u = rng.uniform();
  for (std::size_t s = 0; s < model_.num_states; ++s) {
    u -= model_.start[s];
    if (u < 0.0) return one_hot(s);
  }
  return one_hot(model_.num_states - 1);
}

StepResult ChainMdp::step(std::span<const double> state, std::span<const double> action,
                          Rng& rng) const {
  require_dims(state.size() == model_.num_states && action.size() == 1,
               "chain_mdp: bad state/action size");
  const std::size_t s = state_index(state);
  const auto a = static_cast<std::size_t>(std::llround(action[0]));
  require_dims(a < model_.num_actions, "chain_mdp: action index out of range");
  const auto& outcomes = model_.transitions(s, a);
  double u = rng.uniform();
  std::size_t next = outcomes.back().first;
  for (const auto& [target, p] : outcomes) {
    u -= p;
    if (u < 0.0) {
      next = target;
      break;
    }
  }
  return {one_hot(next), model_.reward(s, a), false};
}

// --- factory / instance --------------------------------------------------------

std::vector<std::string> env_names() { return {"point_mass", "pendulum", "chain_mdp"}; }

std::unique_ptr<Environment> make_dynamics(std::string_view name, const EnvOptions& opts) {
  if (name == "point_mass") return std::make_unique<PointMass>();
  if (name == "pendulum") return std::make_unique<Pendulum>();
  if (name == "chain_mdp") {
    return std::make_unique<ChainMdp>(opts.chain_states, opts.chain_actions, opts.chain_horizon);
  }
  std::string msg = "unknown environment '" + std::string(name) + "'; valid names:";
  for (const auto& n : env_names()) msg += " " + n;
  throw std::invalid_argument(msg);
}

EnvInstance::EnvInstance(std::unique_ptr<Environment> env, std::uint64_t seed)
    : env_(std::move(env)), rng_(seed, 0xE57) {
  state_ = env_->reset(rng_);
}

EnvInstance::Step EnvInstance::step(std::span<const double> action) {
  StepResult r = env_->step(state_, action, rng_);
  if (!std::isfinite(r.reward)) throw NumericError("environment produced a non-finite reward");
  ++t_;
  episode_return_ += r.reward;
  const bool done = r.terminal || t_ >= env_->horizon();
  Step out{std::move(r.next_state), r.reward, done, episode_return_, t_};
  if (done) {
    state_ = env_->reset(rng_);
    t_ = 0;
    episode_return_ = 0.0;
  } else {
    state_ = out.next_state;
  }
  return out;
}

void EnvInstance::save(std::ostream& os) const {
  os << "env_rng " << rng_ << '\n';
  io::write_vector(os, "env_state", state_);
  io::write_count(os, "env_t", t_);
  io::write_scalar(os, "env_return", episode_return_);
}

void EnvInstance::load(std::istream& is) {
  io::expect(is, "env_rng");
  is >> rng_;
  Vector s = io::read_vector(is, "env_state");
  require_dims(s.size() == env_->obs_dim(), "EnvInstance::load: state length mismatch");
  state_ = std::move(s);
  t_ = io::read_count(is, "env_t");
  episode_return_ = io::read_scalar(is, "env_return");
}

EnvInstance make_env(std::string_view name, std::uint64_t seed, const EnvOptions& opts) {
  return EnvInstance(make_dynamics(name, opts), seed);
}

// --- observation normalization -----------------------------------------------

ObsNormalizer::ObsNormalizer(std::size_t dim) : mean_(dim, 0.0), var_(dim, 1.0) {}

void ObsNormalizer::update(std::span<const double> x) {
  require_dims(x.size() == mean_.size(), "ObsNormalizer: dimension mismatch");
  const double total = count_ + 1.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double delta = x[k] - mean_[k];
    const double new_mean = mean_[k] + delta / total;
    const double m2 = var_[k] * count_ + delta * delta * count_ / total;
    mean_[k] = new_mean;
    var_[k] = m2 / total;
  }
  count_ = total;
}

Vector ObsNormalizer::apply(std::span<const double> x) const {
  Vector out(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    out[k] = std::clamp((x[k] - mean_[k]) / std::sqrt(var_[k] + 1e-8), -10.0, 10.0);
  }
  return out;
}

void ObsNormalizer::restore(double count, Vector mean, Vector var) {
  require_dims(mean.size() == var.size(), "ObsNormalizer::restore: size mismatch");
  count_ = count;
  mean_ = std::move(mean);
  var_ = std::move(var);
}

// --- rollouts ------------------------------------------------------------------

RolloutBatch collect(EnvInstance& env, const Policy& policy, std::size_t n_steps, Rng& rng,
                     ObsNormalizer* normalizer) {
  require_dims(n_steps >= 1, "collect: n_steps must be >= 1");
  const Environment& dyn = env.dynamics();
  require_dims(policy.obs_dim() == dyn.obs_dim() && policy.action_dim() == dyn.act_dim(),
               "collect: policy and environment dimensions disagree");
  RolloutBatch batch;
  batch.states = Matrix(n_steps, dyn.obs_dim());
  batch.next_states = Matrix(n_steps, dyn.obs_dim());
  batch.actions = Matrix(n_steps, dyn.act_dim());
  batch.rewards.resize(n_steps);
  batch.dones.resize(n_steps);
  for (std::size_t t = 0; t < n_steps; ++t) {
    Vector obs(env.state().begin(), env.state().end());
    if (normalizer != nullptr) {
      normalizer->update(obs);
      obs = normalizer->apply(obs);
    }
    const Vector action = policy.sample(obs, rng);
    EnvInstance::Step step = env.step(action);
    Vector next = normalizer != nullptr ? normalizer->apply(step.next_state) : step.next_state;
    std::copy(obs.begin(), obs.end(), batch.states.row(t).begin());
    std::copy(next.begin(), next.end(), batch.next_states.row(t).begin());
    std::copy(action.begin(), action.end(), batch.actions.row(t).begin());
    batch.rewards[t] = step.reward;
    batch.dones[t] = step.done ? 1 : 0;
    if (step.done) batch.episodes.push_back({t, step.episode_return, step.episode_length});
  }
  return batch;
}

ValueFn value_function(const Mlp& net) {
  return [&net](const Matrix& states) {
    const BatchTape tape = forward_batch(net, states);
    const Matrix& out = tape.output();
    Vector v(out.rows());
    for (std::size_t i = 0; i < out.rows(); ++i) v[i] = out(i, 0);
    return v;
  };
}

void compute_targets(RolloutBatch& batch, const ValueFn& value_fn, double gamma, double lambda_gae) {
  if (!(gamma >= 0.0 && gamma <= 1.0 && lambda_gae >= 0.0 && lambda_gae <= 1.0)) {
    throw std::invalid_argument("compute_targets: gamma and lambda must lie in [0, 1]");
  }
  const std::size_t n = batch.size();
  batch.value_preds = value_fn(batch.states);
  batch.next_value_preds = value_fn(batch.next_states);
  require_dims(batch.value_preds.size() == n && batch.next_value_preds.size() == n,
               "compute_targets: value function returned wrong length");
  batch.advantages.assign(n, 0.0);
  batch.q_targets.assign(n, 0.0);
  double next_adv = 0.0;
  for (std::size_t t = n; t-- > 0;) {
    const double not_done = batch.dones[t] ? 0.0 : 1.0;
    const double delta =
        batch.rewards[t] + gamma * batch.next_value_preds[t] * not_done - batch.value_preds[t];
    // The last transition of the batch has no successor inside it.
    const double carry = t + 1 < n ? next_adv : 0.0;
    const double adv = delta + gamma * lambda_gae * not_done * carry;
    batch.advantages[t] = adv;
    batch.q_targets[t] = adv + batch.value_preds[t];
    next_adv = adv;
  }
}

// --- exact chain quantities ----------------------------------------------------

Matrix policy_table(const Policy& policy, const ChainModel& model) {
  require_dims(policy.head() == PolicyHead::categorical && policy.obs_dim() == model.num_states &&
                   policy.num_actions() == model.num_actions,
               "policy_table: policy does not match chain model");
  Matrix pi(model.num_states, model.num_actions);
  for (std::size_t s = 0; s < model.num_states; ++s) {
    Vector obs(model.num_states, 0.0);
    obs[s] = 1.0;
    const Vector p = policy.probabilities(obs);
    std::copy(p.begin(), p.end(), pi.row(s).begin());
  }
  return pi;
}

Vector exact_state_values(const ChainModel& model, const Matrix& pi, double gamma, double tol) {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("exact values need gamma < 1");
  const std::size_t k = model.num_states;
  const std::size_t m = model.num_actions;
  Vector v(k, 0.0);
  for (int iter = 0; iter < 1000000; ++iter) {
    double change = 0.0;
    // Gauss-Seidel sweep
    for (std::size_t s = 0; s < k; ++s) {
      double acc = 0.0;
      for (std::size_t a = 0; a < m; ++a) {
        double q = model.reward(s, a);
        for (const auto& [t, p] : model.transitions(s, a)) q += gamma * p * v[t];
        acc += pi(s, a) * q;
      }
      change = std::max(change, std::abs(acc - v[s]));
      v[s] = acc;
    }
    if (change < tol) break;
  }
  return v;
}

Matrix exact_q_values(const ChainModel& model, const Matrix& pi, double gamma, double tol) {
  const Vector v = exact_state_values(model, pi, gamma, tol);
  Matrix q(model.num_states, model.num_actions);
  for (std::size_t s = 0; s < model.num_states; ++s) {
    for (std::size_t a = 0; a < model.num_actions; ++a) {
      double acc = model.reward(s, a);
      for (const auto& [t, p] : model.transitions(s, a)) acc += gamma * p * v[t];
      q(s, a) = acc;
    }
  }
  return q;
}

double exact_return(const ChainModel& model, const Matrix& pi, double gamma, double tol) {
  const Vector v = exact_state_values(model, pi, gamma, tol);
  double j = 0.0;
  for (std::size_t s = 0; s < model.num_states; ++s) j += model.start[s] * v[s];
  return j;
}

Vector discounted_state_distribution(const ChainModel& model, const Matrix& pi, double gamma,
                                     double tol) {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("distribution needs gamma < 1");
  const std::size_t k = model.num_states;
  const std::size_t m = model.num_actions;
  // mu = (1 - gamma) rho0 + gamma P_pi^T mu
  Vector mu = model.start;
  for (int iter = 0; iter < 1000000; ++iter) {
    Vector next(k, 0.0);
    for (std::size_t s = 0; s < k; ++s) next[s] = (1.0 - gamma) * model.start[s];
    for (std::size_t s = 0; s < k; ++s) {
      for (std::size_t a = 0; a < m; ++a) {
        for (const auto& [t, p] : model.transitions(s, a)) next[t] += gamma * mu[s] * pi(s, a) * p;
      }
    }
    double change = 0.0;
    for (std::size_t s = 0; s < k; ++s) change = std::max(change, std::abs(next[s] - mu[s]));
    mu = std::move(next);
    if (change < tol) break;
  }
  return mu;
}

}  // namespace ccv
