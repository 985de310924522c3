#include "ccv/baseline_fit.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "ccv/kernels.hpp"

namespace ccv {
namespace {

bool uniform_shares(const Vector& shares) {
  for (double a : shares) {
    if (a != shares.front()) return false;
  }
  return true;
}

// Accumulates the loss of rows of a batch and, when `seeds` is non-null, the
// output-space gradient of (loss_sum * scale).
double residual_rows(const Matrix& c, const Matrix& c_old, std::span<const double> q,
                     const Matrix& wbar, const Vector& shares, const FitConfig& cfg,
                     double scale, Matrix* seeds) {
  const auto& k = kernels::active();
  const std::size_t m = c.cols();
  Vector scratch(m);
  const bool uniform = uniform_shares(shares);
  double loss = 0.0;
  for (std::size_t i = 0; i < c.rows(); ++i) {
    double* g = seeds != nullptr ? seeds->row(i).data() : scratch.data();
    const double* ci = c.row(i).data();
    const double* oi = c_old.row(i).data();
    const double* wi = wbar.row(i).data();
    if (uniform) {
      loss += k.baseline_residual(q[i], ci, oi, wi, cfg.lambda, cfg.rho, shares.front() * scale, g, m);
    } else {
      for (std::size_t j = 0; j < m; ++j) {
        loss += k.baseline_residual(q[i], ci + j, oi + j, wi + j, cfg.lambda, cfg.rho,
                                    shares[j] * scale, g + j, 1);
      }
    }
  }
  return loss;
}

Vector column_mean_squares(const Matrix& scores, std::size_t begin, std::size_t end) {
  const auto& k = kernels::active();
  Vector mean(scores.cols(), 0.0);
  for (std::size_t i = begin; i < end; ++i) k.sq_accumulate(scores.row(i).data(), mean.data(), scores.cols());
  for (double& v : mean) v /= static_cast<double>(end - begin);
  return mean;
}

bool is_identity(const std::vector<std::uint32_t>& column_of, std::size_t m) {
  if (column_of.size() != m) return false;
  for (std::size_t j = 0; j < m; ++j) {
    if (column_of[j] != j) return false;
  }
  return true;
}

// Aggregated normalized weights of rows [begin, end) of `scores` written to `out`.
void weights_into(const BaselineNet& net, const Matrix& scores, std::size_t begin, std::size_t end,
                  const Vector& means, Matrix& out) {
  const std::size_t d = scores.cols();
  const std::size_t m = net.width();
  const auto& col = net.loss_column_of();
  out.resize(end - begin, m);
  const bool identity = is_identity(col, m);
  Vector count;
  if (!identity) {
    count.assign(m, 0.0);
    for (std::uint32_t c : col) count[c] += 1.0;
  }
  for (std::size_t i = begin; i < end; ++i) {
    const double* s = scores.row(i).data();
    double* o = out.row(i - begin).data();
    if (identity) {
      for (std::size_t j = 0; j < d; ++j) o[j] = means[j] > 0.0 ? s[j] * s[j] / means[j] : 1.0;
      continue;
    }
    std::fill(o, o + m, 0.0);
    for (std::size_t j = 0; j < d; ++j) o[col[j]] += means[j] > 0.0 ? s[j] * s[j] / means[j] : 1.0;
    for (std::size_t c = 0; c < m; ++c) o[c] = count[c] > 0.0 ? o[c] / count[c] : 1.0;
  }
}

Matrix batch_weights(const BaselineNet& net, const ScoreMatrix& scores) {
  Matrix w;
  weights_into(net, scores, 0, scores.rows(), column_mean_squares(scores, 0, scores.rows()), w);
  return w;
}

Matrix row_range(const Matrix& m, std::size_t begin, std::size_t end) {
  const auto src = m.data().subspan(begin * m.cols(), (end - begin) * m.cols());
  return Matrix(end - begin, m.cols(), Vector(src.begin(), src.end()));
}

// Outputs of `net` on every row, evaluated in chunks to bound tape memory.
Matrix chunked_forward(const Mlp& net, const Matrix& states) {
  constexpr std::size_t kChunk = 256;
  const std::size_t n = states.rows();
  Matrix out(n, net.output_dim());
  for (std::size_t begin = 0; begin < n; begin += kChunk) {
    const std::size_t end = std::min(n, begin + kChunk);
    const Matrix c = forward_batch(net, row_range(states, begin, end)).output();
    std::copy(c.data().begin(), c.data().end(), out.row(begin).begin());
  }
  return out;
}

// Full-batch loss from precomputed outputs, weights built chunk by chunk.
double full_loss(const BaselineNet& net, const Matrix& c, const Matrix& c_old,
                 std::span<const double> q_hat, const ScoreMatrix& scores, const Vector& means,
                 const FitConfig& cfg) {
  constexpr std::size_t kChunk = 256;
  const std::size_t n = c.rows();
  Matrix w;
  double total = 0.0;
  for (std::size_t begin = 0; begin < n; begin += kChunk) {
    const std::size_t end = std::min(n, begin + kChunk);
    weights_into(net, scores, begin, end, means, w);
    total += residual_rows(row_range(c, begin, end), row_range(c_old, begin, end),
                           q_hat.subspan(begin, end - begin), w, net.shares(), cfg, 1.0, nullptr);
  }
  return total / static_cast<double>(n);
}

}  // namespace

void FitConfig::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("FitConfig: lambda must lie in [0, 1]");
  if (!(rho >= 0.0)) throw std::invalid_argument("FitConfig: rho must be >= 0");
  if (minibatches == 0) throw std::invalid_argument("FitConfig: minibatches must be >= 1");
  if (!(lr >= 0.0)) throw std::invalid_argument("FitConfig: lr must be >= 0");
}

BaselineNet::BaselineNet(CvMode mode, const ParamLayout& policy_layout, std::size_t obs_dim,
                         const std::vector<std::size_t>& hidden, Rng& rng, bool tied)
    : mode_(mode), tied_(tied) {
  const std::size_t d = policy_layout.total_dim();
  std::size_t m = 0;
  switch (mode) {
    case CvMode::scalar:
      column_of_.assign(d, 0);
      m = 1;
      break;
    case CvMode::layer:
      column_of_ = policy_layout.segment_of_coordinate();
      m = policy_layout.num_segments();
      break;
    case CvMode::coord:
      column_of_.resize(d);
      for (std::size_t j = 0; j < d; ++j) column_of_[j] = static_cast<std::uint32_t>(j);
      m = d;
      break;
    default:
      throw std::invalid_argument("BaselineNet: mode must be scalar, layer or coord");
  }
  if (tied_) {
    column_of_.assign(d, 0);
    m = 1;
  }
  loss_column_of_ = column_of_;
  shares_.assign(m, 0.0);
  for (std::uint32_t c : column_of_) shares_[c] += 1.0;
  for (double& a : shares_) a /= static_cast<double>(d);

  std::vector<std::size_t> sizes{obs_dim};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(m);
  net_ = Mlp::initialized(std::move(sizes), rng, std::sqrt(2.0), 1.0);
  old_net_ = net_;
  adam_ = Adam(net_.param_count());
}

void BaselineNet::snapshot() {
  old_net_ = net_;
  ++snapshots_;
}

void BaselineNet::restore_snapshot(std::span<const double> old_params, std::uint64_t count) {
  old_net_.set_params(old_params);
  snapshots_ = count;
}

CoordMatrix BaselineNet::wrap(Matrix raw) const { return CoordMatrix(std::move(raw), column_of_); }

CoordMatrix BaselineNet::predict(const Matrix& states) const {
  BatchTape tape = forward_batch(net_, states);
  return wrap(std::move(tape.activations.back()));
}

Matrix normalized_weights(const ScoreMatrix& scores) {
  const std::size_t n = scores.rows();
  const std::size_t d = scores.cols();
  require_dims(n >= 1, "normalized_weights: need at least one row");
  Vector mean(d, 0.0);
  const auto& k = kernels::active();
  for (std::size_t i = 0; i < n; ++i) k.sq_accumulate(scores.row(i).data(), mean.data(), d);
  for (double& v : mean) v /= static_cast<double>(n);
  Matrix w(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    auto s = scores.row(i);
    auto r = w.row(i);
    for (std::size_t j = 0; j < d; ++j) r[j] = mean[j] > 0.0 ? s[j] * s[j] / mean[j] : 1.0;
  }
  return w;
}

Matrix aggregate_weights(const Matrix& weights, const std::vector<std::uint32_t>& column_of,
                         std::size_t m) {
  require_dims(weights.cols() == column_of.size(), "aggregate_weights: column_of length != d");
  Vector count(m, 0.0);
  for (std::uint32_t c : column_of) {
    require_dims(c < m, "aggregate_weights: group index out of range");
    count[c] += 1.0;
  }
  Matrix out(weights.rows(), m, 0.0);
  for (std::size_t i = 0; i < weights.rows(); ++i) {
    auto w = weights.row(i);
    auto o = out.row(i);
    for (std::size_t j = 0; j < w.size(); ++j) o[column_of[j]] += w[j];
    for (std::size_t c = 0; c < m; ++c) o[c] = count[c] > 0.0 ? o[c] / count[c] : 1.0;
  }
  return out;
}

double baseline_loss(const BaselineNet& net, const Matrix& states, std::span<const double> q_hat,
                     const Matrix& wbar, const FitConfig& cfg) {
  const std::size_t n = states.rows();
  require_dims(q_hat.size() == n && wbar.rows() == n && wbar.cols() == net.width(),
               "baseline_loss: shape mismatch");
  require_dims(n >= 1, "baseline_loss: empty batch");
  const Matrix c = forward_batch(net.net(), states).output();
  const Matrix c_old = forward_batch(net.old_net(), states).output();
  return residual_rows(c, c_old, q_hat, wbar, net.shares(), cfg, 1.0, nullptr) /
         static_cast<double>(n);
}

double baseline_loss_from_scores(const BaselineNet& net, const Matrix& states,
                                 std::span<const double> q_hat, const ScoreMatrix& scores,
                                 const FitConfig& cfg) {
  require_dims(scores.rows() == states.rows() && scores.cols() == net.coords(),
               "baseline_loss: scores shape mismatch");
  return baseline_loss(net, states, q_hat, batch_weights(net, scores), cfg);
}

std::vector<std::vector<std::size_t>> minibatch_indices(std::size_t n, std::size_t parts, Rng& rng) {
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
  parts = std::max<std::size_t>(1, std::min(parts, n));
  std::vector<std::vector<std::size_t>> out(parts);
  std::size_t start = 0;
  for (std::size_t p = 0; p < parts; ++p) {
    const std::size_t end = (n * (p + 1)) / parts;
    out[p].assign(perm.begin() + static_cast<std::ptrdiff_t>(start),
                  perm.begin() + static_cast<std::ptrdiff_t>(end));
    start = end;
  }
  return out;
}

void gather_rows_into(const Matrix& m, std::span<const std::size_t> idx, Matrix& out) {
  out.resize(idx.size(), m.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    auto src = m.row(idx[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
}

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> idx) {
  Matrix out;
  gather_rows_into(m, idx, out);
  return out;
}

Vector gather(std::span<const double> v, std::span<const std::size_t> idx) {
  Vector out(idx.size());
  for (std::size_t r = 0; r < idx.size(); ++r) out[r] = v[idx[r]];
  return out;
}

FitReport fit(BaselineNet& net, const Matrix& states, std::span<const double> q_hat,
              const ScoreMatrix& scores, const FitConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t n = states.rows();
  require_dims(n >= 1 && q_hat.size() == n && scores.rows() == n && scores.cols() == net.coords(),
               "fit: shape mismatch");
  net.snapshot();

  const Vector full_means = column_mean_squares(scores, 0, n);
  Matrix c_old = chunked_forward(net.old_net(), states);
  FitReport report;
  report.loss_before = full_loss(net, c_old, c_old, q_hat, scores, full_means, cfg);
  if (!std::isfinite(report.loss_before)) {
    throw NumericError("fit: non-finite baseline loss before fitting");
  }
  const Vector saved(net.net().params().begin(), net.net().params().end());
  const Adam saved_adam = net.optimizer();

  Vector grad(net.net().param_count());
  Matrix s;
  Matrix sc;
  Matrix w;
  Matrix old;
  Matrix seeds;
  Vector q;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto batches = minibatch_indices(n, cfg.minibatches, rng);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto& idx = batches[b];
      gather_rows_into(states, idx, s);
      gather_rows_into(scores, idx, sc);
      gather_rows_into(c_old, idx, old);
      q = gather(q_hat, idx);
      const Vector means = cfg.full_batch_normalization ? full_means : column_mean_squares(sc, 0, sc.rows());
      weights_into(net, sc, 0, sc.rows(), means, w);
      const BatchTape tape = forward_batch(net.net(), s);
      seeds.resize(idx.size(), net.width());
      const double inv = 1.0 / static_cast<double>(idx.size());
      const double loss = residual_rows(tape.output(), old, q, w, net.shares(), cfg, inv, &seeds);
      if (!std::isfinite(loss)) {
        throw NumericError("fit: non-finite baseline loss at epoch " + std::to_string(epoch) +
                           ", minibatch " + std::to_string(b));
      }
      std::fill(grad.begin(), grad.end(), 0.0);
      backward_batch(net.net(), tape, seeds, grad);
      clip_grad_norm(grad, cfg.max_grad_norm);
      net.optimizer().step(net.mutable_net().mutable_params(), grad, cfg.lr);
      ++report.steps;
    }
  }

  Matrix c = chunked_forward(net.net(), states);
  report.loss_after = full_loss(net, c, c_old, q_hat, scores, full_means, cfg);
  if (!std::isfinite(report.loss_after) || report.loss_after > cfg.guard_ratio * report.loss_before) {
    net.mutable_net().set_params(saved);
    net.optimizer() = saved_adam;
    report.reverted = true;
    report.loss_after = report.loss_before;
    report.fitted = std::move(c_old);
  } else {
    report.fitted = std::move(c);
  }
  return report;
}

FitReport fit(BaselineNet& net, const RolloutBatch& batch, const ScoreMatrix& scores,
              const FitConfig& cfg, Rng& rng) {
  require_dims(batch.has_targets(), "fit: batch has no targets");
  return fit(net, batch.states, batch.q_targets, scores, cfg, rng);
}

}  // namespace ccv
