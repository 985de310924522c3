#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "ccv/linalg.hpp"
#include "ccv/mlp.hpp"
#include "ccv/policy.hpp"

namespace ccv {

// Control-variate family. `none` is the plain estimator, `value` subtracts a
// learned state value, the others use fitted or closed-form baselines with
// 1, L (parameter tensors) or d outputs.
enum class CvMode { none, value, scalar, layer, coord };

std::string_view cv_mode_name(CvMode mode);
// Throws std::invalid_argument on unknown names.
CvMode parse_cv_mode(std::string_view name);

// n x m values addressed per coordinate j through column_of[j] in [0, m).
// m = 1 broadcasts one value to all coordinates, m = d is one value per
// coordinate, m = L groups coordinates by ParamLayout segment.
class CoordMatrix {
 public:
  CoordMatrix() = default;
  CoordMatrix(Matrix values, std::vector<std::uint32_t> column_of);

  static CoordMatrix broadcast(std::span<const double> per_row, std::size_t d);
  static CoordMatrix full(Matrix values);
  static CoordMatrix grouped(Matrix values, const ParamLayout& layout);

  std::size_t rows() const { return values_.rows(); }
  std::size_t coords() const { return column_of_.size(); }
  std::size_t width() const { return values_.cols(); }
  bool is_identity() const { return identity_; }

  const Matrix& values() const { return values_; }
  Matrix& mutable_values() { return values_; }
  const std::vector<std::uint32_t>& column_of() const { return column_of_; }

  double at(std::size_t i, std::size_t j) const { return values_(i, column_of_[j]); }
  void expand_row(std::size_t i, std::span<double> out) const;
  Matrix expand() const;

 private:
  Matrix values_;
  std::vector<std::uint32_t> column_of_;
  bool identity_ = false;
};

struct BaselineValues {
  CvMode mode = CvMode::none;
  CoordMatrix values;

  static BaselineValues none(std::size_t n, std::size_t d);
};

struct PgEstimate {
  Matrix rows;  // n x d, row i = score_i * (Q_i - c(s_i))
  Vector mean;
};

// Per-sample gradient rows and their mean.
PgEstimate pg_estimate(const ScoreMatrix& scores, std::span<const double> q_hat,
                       const BaselineValues& baselines);

// Assignment of samples to states (or pooled groups).
struct StateGroups {
  std::vector<std::size_t> group_of;
  std::size_t num_groups = 0;

  static StateGroups pooled(std::size_t n);
  static StateGroups singletons(std::size_t n);
};

// Closed-form minimum-variance baselines. `weights` are optional per-sample
// probability masses (uniform when empty), so exact enumeration and empirical
// samples share one code path.

// b*(g) = sum_i w_i |score_i|^2 Q_i / sum_i w_i |score_i|^2 over i in g.
Vector optimal_scalar_baseline(const ScoreMatrix& scores, std::span<const double> q_hat,
                               const StateGroups& groups, std::span<const double> weights = {});

// G x d; per coordinate weights score_ij^2.
Matrix optimal_coord_baseline(const ScoreMatrix& scores, std::span<const double> q_hat,
                              const StateGroups& groups, std::span<const double> weights = {});

// G x L; group weights sum_{j in segment} score_ij^2.
Matrix optimal_layer_baseline(const ScoreMatrix& scores, std::span<const double> q_hat,
                              const StateGroups& groups, const ParamLayout& layout,
                              std::span<const double> weights = {});

// Expands per-group baselines (G x m) into per-sample BaselineValues.
BaselineValues baselines_from_groups(CvMode mode, const Matrix& per_group,
                                     const StateGroups& groups, const ParamLayout& layout);

struct VarianceEstimate {
  double variance = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  std::size_t n = 0;
};

// Sum over columns of the unbiased sample variance, with a chi-square 95%
// interval that treats the total as having n - 1 degrees of freedom.
VarianceEstimate trace_variance(const Matrix& grad_rows);

// chi-square interval for a variance estimate from n samples.
std::pair<double, double> chi_square_interval(double variance, std::size_t n, double level = 0.95);

// Streaming version of trace_variance (Welford per column).
class TraceVarianceAccumulator {
 public:
  explicit TraceVarianceAccumulator(std::size_t d) : mean_(d, 0.0), m2_(d, 0.0) {}
  void add(std::span<const double> row);
  std::size_t count() const { return n_; }
  VarianceEstimate result() const;
  const Vector& mean() const { return mean_; }

 private:
  std::size_t n_ = 0;
  Vector mean_;
  Vector m2_;
};

// Exact moments under a probability mass over rows (enumeration oracle).
Vector weighted_mean(const Matrix& rows, std::span<const double> probs);
double population_trace_variance(const Matrix& rows, std::span<const double> probs);

// Mean over estimates of |estimate - reference|^2.
double mse_vs_reference(const std::vector<Vector>& estimates, std::span<const double> reference);

struct EstimatorReport {
  CvMode mode = CvMode::none;
  Vector grad_mean;
  double trace_variance = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  std::optional<double> mse_vs_reference;
  std::size_t n = 0;
};

EstimatorReport make_report(CvMode mode, const PgEstimate& estimate);

}  // namespace ccv
