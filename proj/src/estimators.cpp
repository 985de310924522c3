#include "ccv/estimators.hpp"

#include <boost/math/distributions/chi_squared.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "ccv/kernels.hpp"

namespace ccv {
namespace {

double sample_weight(std::span<const double> weights, std::size_t i) {
  return weights.empty() ? 1.0 : weights[i];
}

void check_inputs(const ScoreMatrix& scores, std::span<const double> q_hat, const StateGroups& groups,
                  std::span<const double> weights) {
  const std::size_t n = scores.rows();
  require_dims(q_hat.size() == n, "baseline: q_hat length != number of score rows");
  require_dims(groups.group_of.size() == n, "baseline: state_groups length != number of rows");
  require_dims(weights.empty() || weights.size() == n, "baseline: weights length mismatch");
  for (std::size_t g : groups.group_of) {
    require_dims(g < groups.num_groups, "baseline: group index out of range");
  }
}

// Fallback value: mean of Q over the group (sample-weighted when weights given).
Vector group_q_means(std::span<const double> q_hat, const StateGroups& groups,
                     std::span<const double> weights) {
  Vector num(groups.num_groups, 0.0);
  Vector den(groups.num_groups, 0.0);
  for (std::size_t i = 0; i < q_hat.size(); ++i) {
    const double w = sample_weight(weights, i);
    num[groups.group_of[i]] += w * q_hat[i];
    den[groups.group_of[i]] += w;
  }
  for (std::size_t g = 0; g < num.size(); ++g) num[g] = den[g] > 0.0 ? num[g] / den[g] : 0.0;
  return num;
}

}  // namespace

std::string_view cv_mode_name(CvMode mode) {
  switch (mode) {
    case CvMode::none: return "none";
    case CvMode::value: return "value";
    case CvMode::scalar: return "scalar";
    case CvMode::layer: return "layer";
    case CvMode::coord: return "coord";
  }
  return "unknown";
}

CvMode parse_cv_mode(std::string_view name) {
  for (CvMode m : {CvMode::none, CvMode::value, CvMode::scalar, CvMode::layer, CvMode::coord}) {
    if (cv_mode_name(m) == name) return m;
  }
  throw std::invalid_argument("unknown cv mode '" + std::string(name) +
                              "'; valid: none value scalar layer coord");
}

// --- CoordMatrix -------------------------------------------------------------

CoordMatrix::CoordMatrix(Matrix values, std::vector<std::uint32_t> column_of)
    : values_(std::move(values)), column_of_(std::move(column_of)) {
  for (std::uint32_t c : column_of_) {
    require_dims(c < values_.cols(), "CoordMatrix: column index out of range");
  }
  identity_ = values_.cols() == column_of_.size();
  for (std::size_t j = 0; identity_ && j < column_of_.size(); ++j) identity_ = column_of_[j] == j;
}

CoordMatrix CoordMatrix::broadcast(std::span<const double> per_row, std::size_t d) {
  return CoordMatrix(Matrix(per_row.size(), 1, Vector(per_row.begin(), per_row.end())),
                     std::vector<std::uint32_t>(d, 0));
}

CoordMatrix CoordMatrix::full(Matrix values) {
  std::vector<std::uint32_t> col(values.cols());
  std::iota(col.begin(), col.end(), 0u);
  return CoordMatrix(std::move(values), std::move(col));
}

CoordMatrix CoordMatrix::grouped(Matrix values, const ParamLayout& layout) {
  require_dims(values.cols() == layout.num_segments(), "CoordMatrix::grouped: width != segments");
  return CoordMatrix(std::move(values), layout.segment_of_coordinate());
}

void CoordMatrix::expand_row(std::size_t i, std::span<double> out) const {
  require_dims(out.size() == coords(), "CoordMatrix::expand_row: length mismatch");
  auto r = values_.row(i);
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = r[column_of_[j]];
}

Matrix CoordMatrix::expand() const {
  Matrix out(rows(), coords());
  for (std::size_t i = 0; i < rows(); ++i) expand_row(i, out.row(i));
  return out;
}

BaselineValues BaselineValues::none(std::size_t n, std::size_t d) {
  return {CvMode::none, CoordMatrix(Matrix(n, 1, 0.0), std::vector<std::uint32_t>(d, 0))};
}

// --- estimators ----------------------------------------------------------------

PgEstimate pg_estimate(const ScoreMatrix& scores, std::span<const double> q_hat,
                       const BaselineValues& baselines) {
  const std::size_t n = scores.rows();
  const std::size_t d = scores.cols();
  const CoordMatrix& b = baselines.values;
  require_dims(q_hat.size() == n, "pg_estimate: q_hat length != n");
  require_dims(b.rows() == n && b.coords() == d, "pg_estimate: baseline shape != n x d");
  const auto& k = kernels::active();
  PgEstimate out{Matrix(n, d), Vector(d, 0.0)};
  const auto& col = b.column_of();
  for (std::size_t i = 0; i < n; ++i) {
    const double* s = scores.row(i).data();
    double* g = out.rows.row(i).data();
    if (b.is_identity()) {
      k.residual_product(s, q_hat[i], b.values().row(i).data(), g, d);
    } else {
      auto bv = b.values().row(i);
      std::size_t j = 0;
      while (j < d) {
        const std::uint32_t c = col[j];
        const double r = q_hat[i] - bv[c];
        std::size_t end = j;
        while (end < d && col[end] == c) ++end;
        for (; j < end; ++j) g[j] = s[j] * r;
      }
    }
    k.axpy(1.0, g, out.mean.data(), d);
  }
  for (double& v : out.mean) v /= static_cast<double>(n);
  return out;
}

StateGroups StateGroups::pooled(std::size_t n) { return {std::vector<std::size_t>(n, 0), n > 0 ? 1u : 0u}; }

StateGroups StateGroups::singletons(std::size_t n) {
  StateGroups g{std::vector<std::size_t>(n), n};
  std::iota(g.group_of.begin(), g.group_of.end(), std::size_t{0});
  return g;
}

Vector optimal_scalar_baseline(const ScoreMatrix& scores, std::span<const double> q_hat,
                               const StateGroups& groups, std::span<const double> weights) {
  check_inputs(scores, q_hat, groups, weights);
  const auto& k = kernels::active();
  Vector num(groups.num_groups, 0.0);
  Vector den(groups.num_groups, 0.0);
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    const double w = sample_weight(weights, i) * k.sum_sq(scores.row(i).data(), scores.cols());
    num[groups.group_of[i]] += w * q_hat[i];
    den[groups.group_of[i]] += w;
  }
  const Vector fallback = group_q_means(q_hat, groups, weights);
  for (std::size_t g = 0; g < num.size(); ++g) {
    num[g] = den[g] > 0.0 ? num[g] / den[g] : fallback[g];
  }
  return num;
}

Matrix optimal_coord_baseline(const ScoreMatrix& scores, std::span<const double> q_hat,
                              const StateGroups& groups, std::span<const double> weights) {
  check_inputs(scores, q_hat, groups, weights);
  const std::size_t d = scores.cols();
  Matrix num(groups.num_groups, d, 0.0);
  Matrix den(groups.num_groups, d, 0.0);
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    const std::size_t g = groups.group_of[i];
    const double w = sample_weight(weights, i);
    auto s = scores.row(i);
    auto nr = num.row(g);
    auto dr = den.row(g);
    for (std::size_t j = 0; j < d; ++j) {
      const double sq = w * s[j] * s[j];
      nr[j] += sq * q_hat[i];
      dr[j] += sq;
    }
  }
  const Vector scalar = optimal_scalar_baseline(scores, q_hat, groups, weights);
  for (std::size_t g = 0; g < groups.num_groups; ++g) {
    for (std::size_t j = 0; j < d; ++j) {
      num(g, j) = den(g, j) > 0.0 ? num(g, j) / den(g, j) : scalar[g];
    }
  }
  return num;
}

Matrix optimal_layer_baseline(const ScoreMatrix& scores, std::span<const double> q_hat,
                              const StateGroups& groups, const ParamLayout& layout,
                              std::span<const double> weights) {
  check_inputs(scores, q_hat, groups, weights);
  require_dims(layout.total_dim() == scores.cols(), "optimal_layer_baseline: layout != d");
  const auto& k = kernels::active();
  const std::size_t segs = layout.num_segments();
  Matrix num(groups.num_groups, segs, 0.0);
  Matrix den(groups.num_groups, segs, 0.0);
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    const std::size_t g = groups.group_of[i];
    const double w = sample_weight(weights, i);
    const double* s = scores.row(i).data();
    for (std::size_t l = 0; l < segs; ++l) {
      const Segment& seg = layout.segment(l);
      const double sq = w * k.sum_sq(s + seg.offset, seg.length);
      num(g, l) += sq * q_hat[i];
      den(g, l) += sq;
    }
  }
  const Vector scalar = optimal_scalar_baseline(scores, q_hat, groups, weights);
  for (std::size_t g = 0; g < groups.num_groups; ++g) {
    for (std::size_t l = 0; l < segs; ++l) {
      num(g, l) = den(g, l) > 0.0 ? num(g, l) / den(g, l) : scalar[g];
    }
  }
  return num;
}

BaselineValues baselines_from_groups(CvMode mode, const Matrix& per_group,
                                     const StateGroups& groups, const ParamLayout& layout) {
  const std::size_t n = groups.group_of.size();
  const std::size_t d = layout.total_dim();
  Matrix values(n, per_group.cols());
  for (std::size_t i = 0; i < n; ++i) {
    auto src = per_group.row(groups.group_of[i]);
    std::copy(src.begin(), src.end(), values.row(i).begin());
  }
  switch (mode) {
    case CvMode::none:
      return BaselineValues::none(n, d);
    case CvMode::value:
    case CvMode::scalar:
      require_dims(per_group.cols() == 1, "baselines_from_groups: scalar modes need width 1");
      return {mode, CoordMatrix(std::move(values), std::vector<std::uint32_t>(d, 0))};
    case CvMode::layer:
      return {mode, CoordMatrix::grouped(std::move(values), layout)};
    case CvMode::coord:
      require_dims(per_group.cols() == d, "baselines_from_groups: coord mode needs width d");
      return {mode, CoordMatrix::full(std::move(values))};
  }
  throw std::logic_error("baselines_from_groups: bad mode");
}

// --- variance ------------------------------------------------------------------

std::pair<double, double> chi_square_interval(double variance, std::size_t n, double level) {
  if (n < 2) throw std::invalid_argument("chi_square_interval: need n >= 2");
  const double dof = static_cast<double>(n - 1);
  const boost::math::chi_squared_distribution<double> chi(dof);
  const double alpha = 1.0 - level;
  const double upper_q = boost::math::quantile(chi, 1.0 - alpha / 2.0);
  const double lower_q = boost::math::quantile(chi, alpha / 2.0);
  return {dof * variance / upper_q, dof * variance / lower_q};
}

VarianceEstimate trace_variance(const Matrix& grad_rows) {
  const std::size_t n = grad_rows.rows();
  const std::size_t d = grad_rows.cols();
  if (n < 2) throw std::invalid_argument("trace_variance: need at least 2 samples");
  const auto& k = kernels::active();
  Vector mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) k.axpy(1.0, grad_rows.row(i).data(), mean.data(), d);
  for (double& v : mean) v /= static_cast<double>(n);
  Vector sq(d, 0.0);
  Vector dev(d);
  for (std::size_t i = 0; i < n; ++i) {
    auto r = grad_rows.row(i);
    for (std::size_t j = 0; j < d; ++j) dev[j] = r[j] - mean[j];
    k.sq_accumulate(dev.data(), sq.data(), d);
  }
  double total = 0.0;
  for (double v : sq) total += v;
  total /= static_cast<double>(n - 1);
  const auto [lo, hi] = chi_square_interval(total, n);
  return {total, lo, hi, n};
}

void TraceVarianceAccumulator::add(std::span<const double> row) {
  require_dims(row.size() == mean_.size(), "TraceVarianceAccumulator: row length mismatch");
  ++n_;
  const double inv = 1.0 / static_cast<double>(n_);
  for (std::size_t j = 0; j < row.size(); ++j) {
    const double delta = row[j] - mean_[j];
    mean_[j] += delta * inv;
    m2_[j] += delta * (row[j] - mean_[j]);
  }
}

VarianceEstimate TraceVarianceAccumulator::result() const {
  if (n_ < 2) throw std::invalid_argument("TraceVarianceAccumulator: need at least 2 samples");
  double total = 0.0;
  for (double v : m2_) total += v;
  total /= static_cast<double>(n_ - 1);
  const auto [lo, hi] = chi_square_interval(total, n_);
  return {total, lo, hi, n_};
}

Vector weighted_mean(const Matrix& rows, std::span<const double> probs) {
  require_dims(probs.size() == rows.rows(), "weighted_mean: probs length mismatch");
  Vector mean(rows.cols(), 0.0);
  for (std::size_t i = 0; i < rows.rows(); ++i) {
    auto r = rows.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) mean[j] += probs[i] * r[j];
  }
  return mean;
}

double population_trace_variance(const Matrix& rows, std::span<const double> probs) {
  const Vector mean = weighted_mean(rows, probs);
  double total = 0.0;
  for (std::size_t i = 0; i < rows.rows(); ++i) {
    auto r = rows.row(i);
    double acc = 0.0;
    for (std::size_t j = 0; j < r.size(); ++j) {
      const double dv = r[j] - mean[j];
      acc += dv * dv;
    }
    total += probs[i] * acc;
  }
  return total;
}

double mse_vs_reference(const std::vector<Vector>& estimates, std::span<const double> reference) {
  if (estimates.empty()) throw std::invalid_argument("mse_vs_reference: need at least one estimate");
  double total = 0.0;
  for (const Vector& e : estimates) {
    require_dims(e.size() == reference.size(), "mse_vs_reference: length mismatch");
    double acc = 0.0;
    for (std::size_t j = 0; j < e.size(); ++j) {
      const double dv = e[j] - reference[j];
      acc += dv * dv;
    }
    total += acc;
  }
  return total / static_cast<double>(estimates.size());
}

EstimatorReport make_report(CvMode mode, const PgEstimate& estimate) {
  const VarianceEstimate v = trace_variance(estimate.rows);
  EstimatorReport r;
  r.mode = mode;
  r.grad_mean = estimate.mean;
  r.trace_variance = v.variance;
  r.ci_lo = v.ci_lo;
  r.ci_hi = v.ci_hi;
  r.n = v.n;
  return r;
}

}  // namespace ccv
