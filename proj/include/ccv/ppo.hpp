#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ccv/adam.hpp"
#include "ccv/baseline_fit.hpp"
#include "ccv/envs.hpp"
#include "ccv/estimators.hpp"
#include "ccv/mlp.hpp"
#include "ccv/policy.hpp"
#include "ccv/rng.hpp"

namespace ccv {

struct PPOConfig {
  double clip_eps = 0.2;
  double gamma = 0.99;
  double lambda_gae = 0.95;
  std::size_t epochs = 10;
  std::size_t minibatches = 32;
  double lr = 3e-4;
  bool anneal_lr = true;
  double entropy_coef = 0.0;
  double value_coef = 0.5;
  double max_grad_norm = 0.5;
  std::size_t steps_per_update = 2048;
  std::size_t total_steps = 100000;
  CvMode cv_mode = CvMode::value;
  FitConfig fit;

  std::vector<std::size_t> hidden{64, 64};
  double initial_log_std = 0.0;
  EnvOptions env;

  // Divide rewards by the running std of the discounted return before
  // computing targets. Episode returns are always reported unscaled.
  bool scale_rewards = true;
  bool normalize_advantages = true;
  // Normalize every advantage column separately instead of sharing the
  // mean/std of the scalar advantage Q - V across columns.
  bool per_column_advantage_norm = false;
  // Fit the baseline on a fresh rollout instead of the policy batch.
  bool independent_sample = false;
  // Episodes used to measure the untrained policy's return.
  std::size_t eval_episodes = 20;
  double divergence_log_std = 20.0;

  // Test hooks. `force_baseline_to_value` runs coord mode with every
  // coordinate baseline equal to the value prediction and skips fitting;
  // `tied_baseline` gives the baseline head one output broadcast to all
  // coordinates.
  bool force_baseline_to_value = false;
  bool tied_baseline = false;

  void validate() const;
  std::size_t num_updates() const;
};

// Running variance of the discounted return, used to rescale rewards.
class RewardScaler {
 public:
  void observe(double reward, bool done, double gamma);
  double scale() const;
  void save(std::ostream& os) const;
  void load(std::istream& is);

 private:
  double ret_ = 0.0;
  double count_ = 1e-4;
  double mean_ = 0.0;
  double var_ = 1.0;
};

struct TrainState {
  std::string env_name;
  CvMode cv_mode = CvMode::value;
  Policy policy;
  Mlp value_fn;
  std::optional<BaselineNet> baseline;
  Adam policy_opt;
  Adam value_opt;
  Rng rng;      // action sampling and policy/value minibatches
  Rng fit_rng;  // baseline minibatches
  std::optional<EnvInstance> env;
  RewardScaler reward_scaler;
  std::uint64_t step = 0;
  std::uint64_t update = 0;
  std::uint64_t episodes = 0;
};

// Fresh state: policy, value and baseline initialized from separate streams of `seed`.
TrainState make_train_state(const std::string& env_name, const PPOConfig& cfg, std::uint64_t seed);

struct ClippedRatio {
  double omega;
  bool clipped;
};

// A >= 0: omega = min(r, 1 + eps); A < 0: omega = max(r, 1 - eps).
ClippedRatio clipped_ratio(double ratio, double advantage, double eps);

// Per-sample, per-coordinate advantages Q - c_j(s).
Matrix coord_advantages(std::span<const double> q_hat, const CoordMatrix& baseline);
Matrix coord_advantages(std::span<const double> q_hat, const BaselineNet& baseline,
                        const Matrix& states);

// Shifts and scales every column by the mean and std of `reference` (or of
// each column itself when per_column is set).
void normalize_advantages(Matrix& adv, std::span<const double> reference, bool per_column);

struct PpoGradient {
  Vector grad;  // ascent direction of the clipped surrogate
  double clip_fraction = 0.0;
};

// (1/n) sum_i omega_ij 1[unclipped_ij] score_ij adv_ij.
PpoGradient coord_ppo_gradient(const ScoreMatrix& scores, std::span<const double> ratios,
                               const Matrix& adv, double eps);

// Same with advantages stored compactly (n x m addressed through column_of);
// each row is expanded to d coordinates only while it is consumed.
PpoGradient coord_ppo_gradient(const ScoreMatrix& scores, std::span<const double> ratios,
                               const CoordMatrix& adv, double eps);

// Compact form of coord_advantages: values Q_i - c_k(s_i) for every distinct baseline k.
CoordMatrix compact_advantages(std::span<const double> q_hat, const CoordMatrix& baseline);

// Reference path for one shared advantage per sample.
PpoGradient scalar_ppo_gradient(const ScoreMatrix& scores, std::span<const double> ratios,
                                std::span<const double> adv, double eps);

// (1/n) sum_i min(r_i A_i, clip(r_i, 1 - eps, 1 + eps) A_i).
double ppo_surrogate(std::span<const double> ratios, std::span<const double> adv, double eps);

struct ValueReport {
  double loss = 0.0;
  std::size_t steps = 0;
};

// 0.5 * value_coef * mean(max((V - Q)^2, (V_old + clip(V - V_old, -eps, eps) - Q)^2)).
double value_loss(const Mlp& value_fn, const Matrix& states, std::span<const double> q_hat,
                  std::span<const double> v_old, double value_coef, double eps);

// Epochs x minibatches of Adam on value_loss against the batch targets.
ValueReport value_update(Mlp& value_fn, Adam& opt, const RolloutBatch& batch, const PPOConfig& cfg,
                         double lr, Rng& rng);

struct CurveRecord {
  std::uint64_t step;
  std::uint64_t episode;
  double episode_return;
};

struct UpdateDiagnostics {
  std::uint64_t update = 0;
  std::uint64_t step = 0;
  double lr = 0.0;
  double clip_fraction = 0.0;
  double baseline_loss_before = 0.0;
  double baseline_loss_after = 0.0;
  bool baseline_reverted = false;
  double value_loss = 0.0;
  double grad_trace_variance = 0.0;
  double mean_abs_log_std = 0.0;
};

struct TrainResult {
  TrainState state;
  std::vector<CurveRecord> curve;
  std::vector<UpdateDiagnostics> diagnostics;
  double initial_return = 0.0;
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using UpdateCallback = std::function<void(const TrainState&, const UpdateDiagnostics&)>;

// Mean undiscounted return of `episodes` complete episodes under `policy`.
double evaluate_policy(const std::string& env_name, const Policy& policy, const EnvOptions& opts,
                       std::size_t episodes, std::uint64_t seed);

// One outer iteration: collect, targets, baseline fit, policy epochs, value update.
UpdateDiagnostics train_update(TrainState& state, const PPOConfig& cfg,
                               std::vector<CurveRecord>& curve);

// Runs updates until cfg.total_steps. Starts from `resume` when given.
TrainResult train(const std::string& env_name, const PPOConfig& cfg, std::uint64_t seed,
                  const UpdateCallback& on_update = {}, std::optional<TrainState> resume = {});

void save_checkpoint(const TrainState& state, const std::string& path);
TrainState load_checkpoint(const std::string& path, const PPOConfig& cfg);

}  // namespace ccv
