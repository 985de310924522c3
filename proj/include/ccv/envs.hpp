#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ccv/linalg.hpp"
#include "ccv/policy.hpp"
#include "ccv/rng.hpp"

namespace ccv {

enum class ActionKind { continuous, discrete };

struct StepResult {
  Vector next_state;
  double reward = 0.0;
  bool terminal = false;
};

// Pure dynamics: all randomness comes from the caller's rng.
class Environment {
 public:
  virtual ~Environment() = default;
  virtual std::string_view name() const = 0;
  virtual std::size_t obs_dim() const = 0;
  // Length of an action vector (1 for discrete actions).
  virtual std::size_t act_dim() const = 0;
  virtual ActionKind action_kind() const = 0;
  virtual std::size_t num_actions() const { return 0; }
  virtual std::size_t horizon() const = 0;
  virtual Vector reset(Rng& rng) const = 0;
  virtual StepResult step(std::span<const double> state, std::span<const double> action,
                          Rng& rng) const = 0;
};

// 2-D double integrator driven toward the origin.
class PointMass final : public Environment {
 public:
  static constexpr double kDt = 0.1;
  static constexpr double kDamping = 0.95;
  static constexpr double kActionCost = 0.01;

  std::string_view name() const override { return "point_mass"; }
  std::size_t obs_dim() const override { return 4; }
  std::size_t act_dim() const override { return 2; }
  ActionKind action_kind() const override { return ActionKind::continuous; }
  std::size_t horizon() const override { return 200; }
  Vector reset(Rng& rng) const override;
  StepResult step(std::span<const double> state, std::span<const double> action,
                  Rng& rng) const override;
};

// Torque-limited pendulum swing-up; observation (cos th, sin th, th_dot).
class Pendulum final : public Environment {
 public:
  std::string_view name() const override { return "pendulum"; }
  std::size_t obs_dim() const override { return 3; }
  std::size_t act_dim() const override { return 1; }
  ActionKind action_kind() const override { return ActionKind::continuous; }
  std::size_t horizon() const override { return 200; }
  Vector reset(Rng& rng) const override;
  StepResult step(std::span<const double> state, std::span<const double> action,
                  Rng& rng) const override;

  // Internal state is (th, th_dot); observations are derived from it.
  static Vector observe(double th, double th_dot);
};

// Finite MDP with enumerable transitions, used as the exact oracle.
struct ChainModel {
  std::size_t num_states = 0;
  std::size_t num_actions = 0;
  Vector start;                                                 // initial distribution
  std::vector<std::vector<std::pair<std::size_t, double>>> next;  // indexed s * M + a
  Matrix reward;                                                // K x M

  const std::vector<std::pair<std::size_t, double>>& transitions(std::size_t s, std::size_t a) const {
    return next[s * num_actions + a];
  }
};

// K-state chain, one-hot observations. Action 0 moves right and action 1 moves
// left, each succeeding with probability kMoveProb; other actions stay. Reward
// s / (K - 1) for every step spent in state s. Starts in state 0.
class ChainMdp final : public Environment {
 public:
  static constexpr double kMoveProb = 0.8;

  ChainMdp(std::size_t num_states, std::size_t num_actions, std::size_t horizon);

  std::string_view name() const override { return "chain_mdp"; }
  std::size_t obs_dim() const override { return model_.num_states; }
  std::size_t act_dim() const override { return 1; }
  ActionKind action_kind() const override { return ActionKind::discrete; }
  std::size_t num_actions() const override { return model_.num_actions; }
  std::size_t horizon() const override { return horizon_; }
  Vector reset(Rng& rng) const override;
  StepResult step(std::span<const double> state, std::span<const double> action,
                  Rng& rng) const override;

  const ChainModel& model() const { return model_; }
  Vector one_hot(std::size_t s) const;
  static std::size_t state_index(std::span<const double> obs);

 private:
  ChainModel model_;
  std::size_t horizon_;
};

struct EnvOptions {
  std::size_t chain_states = 5;
  std::size_t chain_actions = 2;
  std::size_t chain_horizon = 100;
};

std::vector<std::string> env_names();

std::unique_ptr<Environment> make_dynamics(std::string_view name, const EnvOptions& opts = {});

// Running instance: dynamics plus its own seeded rng, the current state and the
// episode bookkeeping. Episodes continue across collect() calls.
class EnvInstance {
 public:
  EnvInstance(std::unique_ptr<Environment> env, std::uint64_t seed);

  const Environment& dynamics() const { return *env_; }
  std::span<const double> state() const { return state_; }

  struct Step {
    Vector next_state;
    double reward;
    bool done;  // terminal or horizon cutoff
    double episode_return;
    std::size_t episode_length;
  };
  // Steps from the current state; resets automatically after done.
  Step step(std::span<const double> action);

  // Text round trip of the rng, current state and episode bookkeeping.
  void save(std::ostream& os) const;
  void load(std::istream& is);

 private:
  std::unique_ptr<Environment> env_;
  Rng rng_;
  Vector state_;
  std::size_t t_ = 0;
  double episode_return_ = 0.0;
};

// Unknown names throw std::invalid_argument listing the valid ones.
EnvInstance make_env(std::string_view name, std::uint64_t seed, const EnvOptions& opts = {});

// Running mean / variance of observations (parallel-merge form).
class ObsNormalizer {
 public:
  explicit ObsNormalizer(std::size_t dim = 0);
  void update(std::span<const double> x);
  Vector apply(std::span<const double> x) const;

  std::size_t dim() const { return mean_.size(); }
  double count() const { return count_; }
  const Vector& mean() const { return mean_; }
  const Vector& var() const { return var_; }
  void restore(double count, Vector mean, Vector var);

 private:
  double count_ = 1e-4;
  Vector mean_;
  Vector var_;
};

struct EpisodeRecord {
  std::size_t end_index = 0;  // transition index within the batch
  double episode_return = 0.0;
  std::size_t length = 0;
};

struct Transition {
  std::span<const double> state;
  std::span<const double> action;
  double reward;
  std::span<const double> next_state;
  bool done;
};

struct RolloutBatch {
  Matrix states;
  Matrix actions;
  Vector rewards;
  Matrix next_states;
  std::vector<std::uint8_t> dones;
  std::vector<EpisodeRecord> episodes;

  // Filled by compute_targets.
  Vector value_preds;
  Vector next_value_preds;
  Vector advantages;
  Vector q_targets;

  std::size_t size() const { return rewards.size(); }
  Transition transition(std::size_t i) const {
    return {states.row(i), actions.row(i), rewards[i], next_states.row(i), dones[i] != 0};
  }
  bool has_targets() const { return q_targets.size() == size(); }
};

RolloutBatch collect(EnvInstance& env, const Policy& policy, std::size_t n_steps, Rng& rng,
                     ObsNormalizer* normalizer = nullptr);

using ValueFn = std::function<Vector(const Matrix&)>;

ValueFn value_function(const Mlp& net);

// GAE backward recursion; Q = A + V.
void compute_targets(RolloutBatch& batch, const ValueFn& value_fn, double gamma, double lambda_gae);

// --- Exact quantities on ChainModel ------------------------------------------

// K x M action probabilities of `policy` on one-hot states.
Matrix policy_table(const Policy& policy, const ChainModel& model);

// Iterative policy evaluation to a sup-norm change below `tol`.
Vector exact_state_values(const ChainModel& model, const Matrix& pi, double gamma,
                          double tol = 1e-14);
Matrix exact_q_values(const ChainModel& model, const Matrix& pi, double gamma, double tol = 1e-14);
double exact_return(const ChainModel& model, const Matrix& pi, double gamma, double tol = 1e-14);

// (1 - gamma) * sum_t gamma^t Pr[s_t = s]; sums to 1.
Vector discounted_state_distribution(const ChainModel& model, const Matrix& pi, double gamma,
                                     double tol = 1e-15);

}  // namespace ccv
