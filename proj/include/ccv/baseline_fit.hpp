#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ccv/adam.hpp"
#include "ccv/envs.hpp"
#include "ccv/estimators.hpp"
#include "ccv/linalg.hpp"
#include "ccv/mlp.hpp"
#include "ccv/rng.hpp"

namespace ccv {

struct FitConfig {
  double lambda = 0.01;  // 1 = plain value regression, 0 = variance-weighted
  double rho = 0.1;      // proximal strength toward the pre-fit snapshot
  std::size_t epochs = 5;
  std::size_t minibatches = 32;
  double lr = 3e-4;
  double max_grad_norm = 0.5;
  // Normalize score weights once over the whole batch instead of per minibatch.
  bool full_batch_normalization = false;
  // Revert the fit when the full-batch loss grows by more than this factor.
  double guard_ratio = 1.1;

  void validate() const;
};

// State-dependent baseline c(s) with m outputs: m = 1 (scalar), L (one per
// policy parameter tensor) or d (one per policy coordinate). A tied head emits
// one value broadcast to all d coordinates while still running in coord mode.
class BaselineNet {
 public:
  BaselineNet() = default;
  BaselineNet(CvMode mode, const ParamLayout& policy_layout, std::size_t obs_dim,
              const std::vector<std::size_t>& hidden, Rng& rng, bool tied = false);

  CvMode mode() const { return mode_; }
  bool tied() const { return tied_; }
  // Number of distinct baseline values per state.
  std::size_t width() const { return net_.output_dim(); }
  std::size_t coords() const { return column_of_.size(); }
  const std::vector<std::uint32_t>& column_of() const { return column_of_; }

  const Mlp& net() const { return net_; }
  Mlp& mutable_net() { return net_; }
  const Mlp& old_net() const { return old_net_; }
  Adam& optimizer() { return adam_; }
  const Adam& optimizer() const { return adam_; }

  // Copies the current parameters into the proximal snapshot.
  void snapshot();
  std::uint64_t snapshot_count() const { return snapshots_; }
  // Checkpoint restore of the proximal snapshot.
  void restore_snapshot(std::span<const double> old_params, std::uint64_t count);

  CoordMatrix predict(const Matrix& states) const;
  BaselineValues values(const Matrix& states) const { return {mode_, predict(states)}; }

  // Loss-side view: per-output coordinate membership and share alpha_k = |G_k| / d.
  const std::vector<std::uint32_t>& loss_column_of() const { return loss_column_of_; }
  const Vector& shares() const { return shares_; }

 private:
  CoordMatrix wrap(Matrix raw) const;

  CvMode mode_ = CvMode::scalar;
  bool tied_ = false;
  Mlp net_;
  Mlp old_net_;
  Adam adam_;
  std::vector<std::uint32_t> column_of_;
  std::vector<std::uint32_t> loss_column_of_;
  Vector shares_;
  std::uint64_t snapshots_ = 0;
};

// w_ij = score_ij^2 / mean_i score_ij^2; all-zero columns become all ones.
Matrix normalized_weights(const ScoreMatrix& scores);

// n x m group means of per-coordinate weights, groups given by column_of.
Matrix aggregate_weights(const Matrix& weights, const std::vector<std::uint32_t>& column_of,
                         std::size_t m);

// (1/n) sum_i sum_k alpha_k [ (Q_i - c_k(s_i))^2 ((1 - lambda) wbar_ik + lambda)
//                            + rho (c_k(s_i) - c_old_k(s_i))^2 ]
// `wbar` is n x width (from aggregate_weights over loss_column_of()).
double baseline_loss(const BaselineNet& net, const Matrix& states, std::span<const double> q_hat,
                     const Matrix& wbar, const FitConfig& cfg);

// Convenience: weights computed from `scores` over the whole input.
double baseline_loss_from_scores(const BaselineNet& net, const Matrix& states,
                                 std::span<const double> q_hat, const ScoreMatrix& scores,
                                 const FitConfig& cfg);

struct FitReport {
  double loss_before = 0.0;
  double loss_after = 0.0;
  bool reverted = false;
  std::size_t steps = 0;
  Matrix fitted;  // raw n x width() outputs of the net that was kept, on the fit states
};

// Snapshots the proximal reference, then runs cfg.epochs passes of minibatch
// Adam on baseline_loss. Throws NumericError on a non-finite loss.
FitReport fit(BaselineNet& net, const Matrix& states, std::span<const double> q_hat,
              const ScoreMatrix& scores, const FitConfig& cfg, Rng& rng);

FitReport fit(BaselineNet& net, const RolloutBatch& batch, const ScoreMatrix& scores,
              const FitConfig& cfg, Rng& rng);

// Fisher-Yates permutation of [0, n) split into `parts` nearly equal chunks.
std::vector<std::vector<std::size_t>> minibatch_indices(std::size_t n, std::size_t parts, Rng& rng);

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> idx);
void gather_rows_into(const Matrix& m, std::span<const std::size_t> idx, Matrix& out);
Vector gather(std::span<const double> v, std::span<const std::size_t> idx);

}  // namespace ccv
