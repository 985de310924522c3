#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>

#include "ccv/ppo.hpp"
#include "oracles.hpp"

using namespace ccv;

namespace {

PPOConfig tiny_config(CvMode mode) {
  PPOConfig cfg;
  cfg.cv_mode = mode;
  cfg.hidden = {8};
  cfg.steps_per_update = 128;
  cfg.total_steps = 128 * 10;
  cfg.minibatches = 4;
  cfg.epochs = 2;
  cfg.eval_episodes = 2;
  cfg.fit.minibatches = 4;
  cfg.fit.epochs = 2;
  return cfg;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

ParamLayout layout_of(std::size_t d) {
  ParamLayout l;
  l.append("a", d / 2);
  l.append("b", d - d / 2);
  return l;
}

}  // namespace

TEST_CASE("clipped ratio rule") {
  struct Row {
    double r, a;
    double omega;
    bool clipped;
  };
  const Row rows[] = {{1.1, 1.0, 1.1, false},  {1.3, 1.0, 1.2, true},   {0.7, 1.0, 0.7, false},
                      {0.7, -1.0, 0.8, true},  {1.3, -1.0, 1.3, false}, {0.9, -1.0, 0.9, false},
                      {1.2, 1.0, 1.2, false},  {0.8, -1.0, 0.8, false}, {5.0, 0.0, 1.2, true}};
  for (const Row& row : rows) {
    const ClippedRatio c = clipped_ratio(row.r, row.a, 0.2);
    CHECK(c.omega == doctest::Approx(row.omega).epsilon(1e-15));
    CHECK(c.clipped == row.clipped);
  }
}

TEST_CASE("at ratio one the clipped gradient is the plain estimator mean for every mode") {
  Rng rng(61, 1);
  const std::size_t n = 40, d = 9;
  const ScoreMatrix scores = oracle::random_matrix(n, d, rng);
  const auto q = oracle::random_vector(n, rng);
  const Vector ones(n, 1.0);
  const ParamLayout layout = layout_of(d);
  const Vector v = oracle::random_vector(n, rng);
  const std::vector<BaselineValues> cases{
      BaselineValues::none(n, d),
      {CvMode::value, CoordMatrix::broadcast(v, d)},
      {CvMode::scalar, CoordMatrix::broadcast(oracle::random_vector(n, rng), d)},
      {CvMode::layer, CoordMatrix::grouped(oracle::random_matrix(n, 2, rng), layout)},
      {CvMode::coord, CoordMatrix::full(oracle::random_matrix(n, d, rng))}};
  for (const BaselineValues& b : cases) {
    const PgEstimate est = pg_estimate(scores, q, b);
    const PpoGradient full = coord_ppo_gradient(scores, ones, coord_advantages(q, b.values), 0.2);
    const PpoGradient compact = coord_ppo_gradient(scores, ones, compact_advantages(q, b.values), 0.2);
    CHECK(max_abs_diff(full.grad, est.mean) < 1e-12);
    CHECK(max_abs_diff(compact.grad, est.mean) < 1e-12);
    CHECK(full.clip_fraction == 0.0);
  }
  Vector adv(n);
  for (std::size_t i = 0; i < n; ++i) adv[i] = q[i] - v[i];
  CHECK(max_abs_diff(scalar_ppo_gradient(scores, ones, adv, 0.2).grad, pg_estimate(scores, q, cases[1]).mean) < 1e-12);
}

TEST_CASE("clipped samples contribute nothing") {
  Rng rng(62, 1);
  const std::size_t n = 20, d = 7;
  const ScoreMatrix scores = oracle::random_matrix(n, d, rng);
  Matrix adv = oracle::random_matrix(n, d, rng);
  Vector ratios(n);
  for (double& r : ratios) r = 1.0 + 0.1 * rng.uniform(-1.0, 1.0);
  // Sample 0 is clipped in every coordinate: large ratio with positive advantages.
  ratios[0] = 2.0;
  for (double& a : adv.row(0)) a = std::abs(a) + 0.1;
  const PpoGradient all = coord_ppo_gradient(scores, ratios, adv, 0.2);
  CHECK(all.clip_fraction == doctest::Approx(1.0 / n));

  std::vector<std::size_t> rest;
  for (std::size_t i = 1; i < n; ++i) rest.push_back(i);
  const PpoGradient sub =
      coord_ppo_gradient(gather_rows(scores, rest), gather(ratios, rest), gather_rows(adv, rest), 0.2);
  for (std::size_t j = 0; j < d; ++j) {
    CHECK(all.grad[j] * n == doctest::Approx(sub.grad[j] * (n - 1)).epsilon(1e-12));
  }

  // Moving the clipped ratio further out changes nothing.
  ratios[0] = 3.5;
  const PpoGradient moved = coord_ppo_gradient(scores, ratios, adv, 0.2);
  CHECK(moved.grad == all.grad);
}

TEST_CASE("coordinate gradient matches a per-coordinate reference loop") {
  Rng rng(63, 1);
  const std::size_t n = 33, d = 13;
  const ScoreMatrix scores = oracle::random_matrix(n, d, rng);
  const Matrix adv = oracle::random_matrix(n, d, rng);
  Vector ratios(n);
  for (double& r : ratios) r = rng.uniform(0.5, 1.5);
  Vector expect(d, 0.0);
  std::size_t clipped = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const ClippedRatio c = clipped_ratio(ratios[i], adv(i, j), 0.2);
      if (c.clipped) {
        ++clipped;
        continue;
      }
      expect[j] += c.omega * scores(i, j) * adv(i, j) / n;
    }
  }
  const PpoGradient g = coord_ppo_gradient(scores, ratios, adv, 0.2);
  CHECK(max_abs_diff(g.grad, expect) < 1e-13);
  CHECK(g.clip_fraction == doctest::Approx(static_cast<double>(clipped) / (n * d)));
}

TEST_CASE("shared advantage normalization") {
  Rng rng(64, 1);
  Matrix adv = oracle::random_matrix(10, 3, rng, 4.0);
  const Matrix raw = adv;
  const auto ref = oracle::random_vector(10, rng);
  double mean = 0.0, var = 0.0;
  for (double r : ref) mean += r / 10.0;
  for (double r : ref) var += (r - mean) * (r - mean) / 9.0;
  normalize_advantages(adv, ref, false);
  CHECK(adv(4, 2) == doctest::Approx((raw(4, 2) - mean) / (std::sqrt(var) + 1e-8)).epsilon(1e-13));
  Matrix per = raw;
  normalize_advantages(per, ref, true);
  double col = 0.0;
  for (std::size_t i = 0; i < 10; ++i) col += per(i, 1);
  CHECK(std::abs(col) < 1e-12);
}

TEST_CASE("value regression converges to the least-squares fit") {
  Rng rng(65, 1);
  const std::size_t n = 200, k = 3;
  RolloutBatch b;
  b.states = oracle::random_matrix(n, k, rng);
  b.rewards.assign(n, 0.0);
  b.q_targets.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    b.q_targets[i] = 1.5 * b.states(i, 0) - 0.5 * b.states(i, 2) + 0.3 + 0.2 * rng.normal();
  }
  Mlp net = Mlp::initialized({k, 1}, rng, 1.0, 1.0);
  b.value_preds = forward_batch(net, b.states).output().storage();

  Eigen::MatrixXd x(n, k + 1);
  Eigen::VectorXd y(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) x(i, j) = b.states(i, j);
    x(i, k) = 1.0;
    y(i) = b.q_targets[i];
  }
  const Eigen::VectorXd beta = x.colPivHouseholderQr().solve(y);

  PPOConfig cfg;
  cfg.epochs = 1500;
  cfg.minibatches = 1;
  cfg.clip_eps = 1e6;
  cfg.max_grad_norm = 0.0;
  Adam opt(net.param_count());
  Rng mb(65, 2);
  const ValueReport r = value_update(net, opt, b, cfg, 0.02, mb);
  CHECK(r.steps == 1500);
  // Parameter order: weights of the single output row, then the bias.
  for (std::size_t j = 0; j < k; ++j) CHECK(net.params()[j] == doctest::Approx(beta(j)).epsilon(1e-6));
  CHECK(net.params()[k] == doctest::Approx(beta(k)).epsilon(1e-6));
  double sse = 0.0;
  const Eigen::VectorXd res = y - x * beta;
  sse = res.squaredNorm();
  CHECK(r.loss == doctest::Approx(0.25 * sse / n).epsilon(1e-8));
}

TEST_CASE("value loss applies the clipped form") {
  Mlp net({1, 1});
  net.set_params(std::vector<double>{0.0, 2.0});  // constant prediction 2
  const Matrix s(2, 1, 0.0);
  const std::vector<double> q{0.0, 3.0}, v_old{1.0, 1.0};
  // Sample 0: raw (2-0)^2 = 4, clipped 1.5 -> 2.25, max 4. Sample 1: raw 1, clipped (1.5-3)^2 = 2.25.
  CHECK(value_loss(net, s, q, v_old, 0.5, 0.5) == doctest::Approx(0.5 * 0.5 * (4.0 + 2.25) / 2.0));
}

TEST_CASE("tied coordinate baseline reproduces the scalar run") {
  for (const char* env : {"chain_mdp", "point_mass"}) {
    PPOConfig scalar = tiny_config(CvMode::scalar);
    PPOConfig tied = tiny_config(CvMode::coord);
    tied.tied_baseline = true;
    const TrainResult a = train(env, scalar, 7);
    const TrainResult b = train(env, tied, 7);
    CHECK(a.state.update == 10);
    CHECK(max_abs_diff(a.state.policy.params(), b.state.policy.params()) < 1e-10);
    CHECK(max_abs_diff(a.state.baseline->net().params(), b.state.baseline->net().params()) < 1e-10);
    REQUIRE(a.curve.size() == b.curve.size());
  }
}

TEST_CASE("coordinate run with every baseline forced to the value reproduces the value run") {
  PPOConfig value = tiny_config(CvMode::value);
  PPOConfig forced = tiny_config(CvMode::coord);
  forced.force_baseline_to_value = true;
  const TrainResult a = train("point_mass", value, 3);
  const TrainResult b = train("point_mass", forced, 3);
  CHECK(max_abs_diff(a.state.policy.params(), b.state.policy.params()) < 1e-12);
  CHECK(max_abs_diff(a.state.value_fn.params(), b.state.value_fn.params()) < 1e-12);
  CHECK_THROWS_AS(
      [] {
        PPOConfig bad = tiny_config(CvMode::scalar);
        bad.force_baseline_to_value = true;
        bad.validate();
      }(),
      std::invalid_argument);
}

TEST_CASE("zero epochs leave the policy untouched") {
  for (CvMode mode : {CvMode::value, CvMode::scalar, CvMode::layer, CvMode::coord}) {
    PPOConfig cfg = tiny_config(mode);
    cfg.epochs = 0;
    cfg.total_steps = 128 * 3;
    const TrainState fresh = make_train_state("pendulum", cfg, 11);
    const TrainResult r = train("pendulum", cfg, 11);
    CHECK(r.state.policy.params() == fresh.policy.params());
    CHECK(max_abs_diff(r.state.value_fn.params(), fresh.value_fn.params()) == 0.0);
    CHECK(r.state.step == 384);
  }
}

TEST_CASE("resuming from a checkpoint matches an uninterrupted run") {
  const auto dir = std::filesystem::temp_directory_path() / "ccv_test_resume";
  std::filesystem::create_directories(dir);
  for (CvMode mode : {CvMode::value, CvMode::layer}) {
    PPOConfig cfg = tiny_config(mode);
    cfg.total_steps = 128 * 6;
    const std::string path = (dir / (std::string(cv_mode_name(mode)) + ".ckpt")).string();
    const TrainResult full = train("point_mass", cfg, 5, [&](const TrainState& st, const UpdateDiagnostics&) {
      if (st.update == 3) save_checkpoint(st, path);
    });
    TrainState resumed = load_checkpoint(path, cfg);
    CHECK(resumed.update == 3);
    const TrainResult rest = train("point_mass", cfg, 5, {}, std::move(resumed));
    CHECK(rest.state.policy.params() == full.state.policy.params());
    CHECK(max_abs_diff(rest.state.value_fn.params(), full.state.value_fn.params()) == 0.0);
    CHECK(rest.state.step == full.state.step);
    CHECK(rest.state.episodes == full.state.episodes);
    REQUIRE(!rest.curve.empty());
    CHECK(rest.curve.back().episode_return == full.curve.back().episode_return);
  }
  std::filesystem::remove_all(dir);
  CHECK_THROWS_WITH_AS(load_checkpoint("/nonexistent/ckpt", tiny_config(CvMode::value)),
                       doctest::Contains("not found"), std::runtime_error);
}

TEST_CASE("training is deterministic per seed and diagnostics are sane") {
  const PPOConfig cfg = tiny_config(CvMode::coord);
  const TrainResult a = train("chain_mdp", cfg, 9);
  const TrainResult b = train("chain_mdp", cfg, 9);
  CHECK(a.state.policy.params() == b.state.policy.params());
  REQUIRE(a.diagnostics.size() == 10);
  for (const UpdateDiagnostics& d : a.diagnostics) {
    CHECK(d.clip_fraction >= 0.0);
    CHECK(d.clip_fraction <= 1.0);
    CHECK(std::isfinite(d.baseline_loss_before));
    CHECK(d.grad_trace_variance >= 0.0);
  }
  CHECK(a.diagnostics.front().lr > a.diagnostics.back().lr);
  const TrainResult c = train("chain_mdp", cfg, 10);
  CHECK(a.state.policy.params() != c.state.policy.params());
}

TEST_CASE("reward scaler tracks the discounted return spread") {
  RewardScaler s;
  CHECK(s.scale() == doctest::Approx(1.0));
  for (int t = 0; t < 2000; ++t) s.observe(t % 2 == 0 ? 1.0 : -1.0, false, 0.0);
  CHECK(s.scale() == doctest::Approx(1.0).epsilon(1e-2));
  RewardScaler z;
  for (int t = 0; t < 2000; ++t) z.observe(3.0, true, 0.99);
  CHECK(z.scale() < 1e-2);
}
