#include <doctest.h>

#include <cmath>

#include "ccv/estimators.hpp"
#include "chain_enum.hpp"

using namespace ccv;

namespace {

double weighted_second_moment(const Matrix& rows, const std::vector<double>& p) {
  double total = 0.0;
  for (std::size_t i = 0; i < rows.rows(); ++i) {
    for (double x : rows.row(i)) total += p[i] * x * x;
  }
  return total;
}

}  // namespace

TEST_CASE("CoordMatrix addressing") {
  const std::vector<double> per_row{1.0, 2.0};
  const CoordMatrix b = CoordMatrix::broadcast(per_row, 3);
  CHECK(b.width() == 1);
  CHECK(b.coords() == 3);
  CHECK(b.at(1, 2) == 2.0);
  ParamLayout layout;
  layout.append("w", 2);
  layout.append("b", 1);
  const CoordMatrix g = CoordMatrix::grouped(Matrix(2, 2, std::vector<double>{1, 2, 3, 4}), layout);
  const Matrix e = g.expand();
  CHECK(e(0, 0) == 1.0);
  CHECK(e(0, 1) == 1.0);
  CHECK(e(0, 2) == 2.0);
  CHECK(e(1, 2) == 4.0);
  const CoordMatrix f = CoordMatrix::full(Matrix(1, 3, std::vector<double>{7, 8, 9}));
  CHECK(f.is_identity());
  std::vector<double> row(3);
  f.expand_row(0, row);
  CHECK(row[2] == 9.0);
  CHECK_THROWS_AS(CoordMatrix(Matrix(1, 2), {0, 2}), DimensionError);
}

TEST_CASE("pg_estimate rows are score times the per-coordinate advantage") {
  Rng rng(41, 1);
  const Matrix s = oracle::random_matrix(6, 4, rng);
  const auto q = oracle::random_vector(6, rng);
  const Matrix c = oracle::random_matrix(6, 4, rng);
  const PgEstimate est = pg_estimate(s, q, {CvMode::coord, CoordMatrix::full(c)});
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t j = 0; j < 4; ++j) CHECK(est.rows(i, j) == doctest::Approx(s(i, j) * (q[i] - c(i, j))).epsilon(1e-15));
  }
  double m0 = 0.0;
  for (std::size_t i = 0; i < 6; ++i) m0 += est.rows(i, 0) / 6.0;
  CHECK(est.mean[0] == doctest::Approx(m0).epsilon(1e-14));
  const PgEstimate plain = pg_estimate(s, q, BaselineValues::none(6, 4));
  CHECK(plain.rows(2, 3) == doctest::Approx(s(2, 3) * q[2]).epsilon(1e-15));
  CHECK_THROWS_AS(pg_estimate(s, std::vector<double>(5), BaselineValues::none(6, 4)), DimensionError);
}

TEST_CASE("exact policy gradient matches finite differences of the exact return") {
  Rng rng(42, 1);
  const ChainMdp env(4, 3, 100);
  const double gamma = 0.95;
  Policy pol = oracle::random_chain_policy(4, 3, rng, 0.7, {3});
  const auto e = oracle::enumerate(env, pol, gamma);
  const PgEstimate est = pg_estimate(e.scores, e.q, BaselineValues::none(e.q.size(), pol.dim()));
  const Vector g = weighted_mean(est.rows, e.probs);
  Vector p = pol.params();
  Policy probe = pol;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double fd = oracle::fd_partial(p, k, [&] {
      probe.set_params(p);
      return exact_return(env.model(), policy_table(probe, env.model()), gamma);
    });
    CHECK(g[k] / (1.0 - gamma) == doctest::Approx(fd).epsilon(1e-7).scale(1e-8));
  }
}

TEST_CASE("state-dependent baselines leave the expected gradient unchanged") {
  Rng rng(43, 1);
  const ChainMdp env(5, 2, 100);
  for (int trial = 0; trial < 5; ++trial) {
    const Policy pol = oracle::random_chain_policy(5, 2, rng);
    const auto e = oracle::enumerate(env, pol, 0.9);
    const std::size_t n = e.q.size(), d = pol.dim();
    const Vector ref = weighted_mean(pg_estimate(e.scores, e.q, BaselineValues::none(n, d)).rows, e.probs);
    const Matrix per_state = oracle::random_matrix(5, d, rng, 3.0);
    for (CvMode mode : {CvMode::scalar, CvMode::layer, CvMode::coord}) {
      const std::size_t width = mode == CvMode::scalar ? 1 : mode == CvMode::layer ? pol.layout().num_segments() : d;
      Matrix g(5, width);
      for (std::size_t s = 0; s < 5; ++s) {
        for (std::size_t k = 0; k < width; ++k) g(s, k) = per_state(s, k);
      }
      const Vector m = weighted_mean(pg_estimate(e.scores, e.q, baselines_from_groups(mode, g, e.groups, pol.layout())).rows, e.probs);
      for (std::size_t j = 0; j < d; ++j) CHECK(m[j] == doctest::Approx(ref[j]).epsilon(1e-12).scale(1e-12));
    }
  }
}

TEST_CASE("closed-form baselines minimize the weighted second moment per state") {
  Rng rng(44, 1);
  const ChainMdp env(4, 3, 100);
  const Policy pol = oracle::random_chain_policy(4, 3, rng, 1.0, {2});
  const auto e = oracle::enumerate(env, pol, 0.9);
  const std::size_t d = pol.dim();
  const Matrix coord = optimal_coord_baseline(e.scores, e.q, e.groups, e.probs);
  const Vector scalar = optimal_scalar_baseline(e.scores, e.q, e.groups, e.probs);
  const Matrix layer = optimal_layer_baseline(e.scores, e.q, e.groups, pol.layout(), e.probs);
  CHECK(coord.rows() == 4);
  CHECK(coord.cols() == d);
  CHECK(layer.cols() == pol.layout().num_segments());
  // Perturbing any single entry never lowers the objective.
  const auto objective = [&](CvMode mode, const Matrix& g) {
    return weighted_second_moment(pg_estimate(e.scores, e.q, baselines_from_groups(mode, g, e.groups, pol.layout())).rows, e.probs);
  };
  Matrix scalar_m(4, 1);
  for (std::size_t s = 0; s < 4; ++s) scalar_m(s, 0) = scalar[s];
  for (const auto& [mode, base] : std::vector<std::pair<CvMode, Matrix>>{{CvMode::scalar, scalar_m}, {CvMode::layer, layer}, {CvMode::coord, coord}}) {
    const double best = objective(mode, base);
    for (int t = 0; t < 20; ++t) {
      Matrix other = base;
      other(rng.index(4), rng.index(base.cols())) += 0.05 * rng.normal();
      CHECK(objective(mode, other) >= best - 1e-14);
    }
  }
}

TEST_CASE("variance ordering on an exact chain") {
  Rng rng(45, 1);
  const ChainMdp env(5, 3, 100);
  for (int trial = 0; trial < 5; ++trial) {
    const Policy pol = oracle::random_chain_policy(5, 3, rng, 1.0, {4});
    const auto e = oracle::enumerate(env, pol, 0.95);
    const std::size_t n = e.q.size(), d = pol.dim();
    const auto var = [&](const BaselineValues& b) { return population_trace_variance(pg_estimate(e.scores, e.q, b).rows, e.probs); };
    Matrix sc(5, 1);
    const Vector s = optimal_scalar_baseline(e.scores, e.q, e.groups, e.probs);
    for (std::size_t k = 0; k < 5; ++k) sc(k, 0) = s[k];
    const double none = var(BaselineValues::none(n, d));
    const double value = var({CvMode::value, CoordMatrix::broadcast(e.v, d)});
    const double scalar = var(baselines_from_groups(CvMode::scalar, sc, e.groups, pol.layout()));
    const double layer = var(baselines_from_groups(CvMode::layer, optimal_layer_baseline(e.scores, e.q, e.groups, pol.layout(), e.probs), e.groups, pol.layout()));
    const double coord = var(baselines_from_groups(CvMode::coord, optimal_coord_baseline(e.scores, e.q, e.groups, e.probs), e.groups, pol.layout()));
    CHECK(coord <= layer);
    CHECK(layer <= scalar);
    CHECK(scalar <= value);
    CHECK(value <= none);
  }
}

TEST_CASE("trace variance and its chi-square interval") {
  Rng rng(46, 1);
  const Matrix rows = oracle::random_matrix(11, 3, rng);
  const VarianceEstimate v = trace_variance(rows);
  double total = 0.0;
  for (std::size_t j = 0; j < 3; ++j) {
    double m = 0.0;
    for (std::size_t i = 0; i < 11; ++i) m += rows(i, j) / 11.0;
    for (std::size_t i = 0; i < 11; ++i) total += (rows(i, j) - m) * (rows(i, j) - m) / 10.0;
  }
  CHECK(v.variance == doctest::Approx(total).epsilon(1e-13));
  CHECK(v.n == 11);
  // chi-square(10) quantiles: 0.025 -> 3.246973, 0.975 -> 20.483177
  const auto [lo, hi] = chi_square_interval(1.0, 11);
  CHECK(lo == doctest::Approx(10.0 / 20.483177).epsilon(1e-6));
  CHECK(hi == doctest::Approx(10.0 / 3.246973).epsilon(1e-6));
  TraceVarianceAccumulator acc(3);
  for (std::size_t i = 0; i < 11; ++i) acc.add(rows.row(i));
  CHECK(acc.result().variance == doctest::Approx(total).epsilon(1e-12));
  CHECK(acc.result().ci_lo == doctest::Approx(v.ci_lo).epsilon(1e-12));
  CHECK_THROWS_AS(trace_variance(Matrix(1, 3)), std::invalid_argument);
}

TEST_CASE("deterministic rows have zero variance") {
  Matrix rows(20, 4, 0.5);
  const VarianceEstimate v = trace_variance(rows);
  CHECK(v.variance == doctest::Approx(0.0).scale(1e-15));
  CHECK(v.ci_hi == doctest::Approx(0.0).scale(1e-15));
}

TEST_CASE("MSE against a reference") {
  const std::vector<Vector> est{{1.0, 2.0}, {0.0, 0.0}};
  const std::vector<double> ref{1.0, 1.0};
  CHECK(mse_vs_reference(est, ref) == doctest::Approx((1.0 + 2.0) / 2.0));
}

TEST_CASE("cv mode names round-trip") {
  for (CvMode m : {CvMode::none, CvMode::value, CvMode::scalar, CvMode::layer, CvMode::coord}) {
    CHECK(parse_cv_mode(cv_mode_name(m)) == m);
  }
  CHECK_THROWS_AS(parse_cv_mode("vector"), std::invalid_argument);
}
