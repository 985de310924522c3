#include <doctest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "ccv/envs.hpp"
#include "oracles.hpp"

using namespace ccv;

namespace {

Policy random_chain_policy(std::size_t k, std::size_t m, Rng& rng, double scale = 1.0) {
  Policy pol = Policy::categorical(k, m, {}, rng);
  Vector p = pol.params();
  for (double& x : p) x = scale * rng.normal();
  pol.set_params(p);
  return pol;
}

}  // namespace

TEST_CASE("chain model transitions are distributions") {
  const ChainMdp env(6, 3, 50);
  const ChainModel& m = env.model();
  for (std::size_t s = 0; s < m.num_states; ++s) {
    for (std::size_t a = 0; a < m.num_actions; ++a) {
      double total = 0.0;
      for (const auto& [next, p] : m.transitions(s, a)) {
        CHECK(next < m.num_states);
        total += p;
      }
      CHECK(total == doctest::Approx(1.0).epsilon(1e-15));
    }
  }
  CHECK(m.reward(5, 0) == 1.0);
  CHECK(m.reward(0, 2) == 0.0);
  CHECK_THROWS_AS(ChainMdp(1, 2, 10), std::invalid_argument);
}

TEST_CASE("exact chain values agree with a direct linear solve") {
  Rng rng(31, 1);
  for (int trial = 0; trial < 10; ++trial) {
    const ChainMdp env(3 + trial % 4, 2 + trial % 2, 100);
    const ChainModel& m = env.model();
    const Policy pol = random_chain_policy(m.num_states, m.num_actions, rng);
    const Matrix pi = policy_table(pol, m);
    const double gamma = 0.9 + 0.009 * trial;
    const auto v_ref = oracle::solve_values(m, pi, gamma);
    const Vector v = exact_state_values(m, pi, gamma);
    const Matrix q = exact_q_values(m, pi, gamma);
    for (std::size_t s = 0; s < m.num_states; ++s) {
      CHECK(v[s] == doctest::Approx(v_ref[s]).epsilon(1e-10));
      const auto q_ref = oracle::solve_q(m, gamma, s, v_ref);
      for (std::size_t a = 0; a < m.num_actions; ++a) CHECK(q(s, a) == doctest::Approx(q_ref[a]).epsilon(1e-10));
    }
    double j = 0.0;
    for (std::size_t s = 0; s < m.num_states; ++s) j += m.start[s] * v_ref[s];
    CHECK(exact_return(m, pi, gamma) == doctest::Approx(j).epsilon(1e-10));
    const auto d_ref = oracle::solve_occupancy(m, pi, gamma);
    const Vector d = discounted_state_distribution(m, pi, gamma);
    CHECK(std::accumulate(d.begin(), d.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
    for (std::size_t s = 0; s < m.num_states; ++s) CHECK(d[s] == doctest::Approx(d_ref[s]).epsilon(1e-10).scale(1e-12));
  }
}

TEST_CASE("point_mass step by hand") {
  const PointMass pm;
  Rng rng(32, 1);
  const std::vector<double> s{0.5, -0.2, 0.1, 0.0};
  const std::vector<double> a{2.0, -0.5};  // first component clipped to 1
  const StepResult r = pm.step(s, a, rng);
  const double vx = 0.95 * 0.1 + 0.1 * 1.0;
  const double vy = 0.95 * 0.0 + 0.1 * -0.5;
  CHECK(r.reward == doctest::Approx(-(0.25 + 0.04) - 0.01 * (1.0 + 0.25)).epsilon(1e-15));
  CHECK(r.next_state[0] == doctest::Approx(0.5 + 0.1 * vx).epsilon(1e-15));
  CHECK(r.next_state[1] == doctest::Approx(-0.2 + 0.1 * vy).epsilon(1e-15));
  CHECK(r.next_state[2] == doctest::Approx(vx).epsilon(1e-15));
  CHECK_FALSE(r.terminal);
}

TEST_CASE("pendulum keeps observations on the unit circle") {
  const Pendulum p;
  Rng rng(33, 1);
  Vector s = p.reset(rng);
  for (int t = 0; t < 300; ++t) {
    const StepResult r = p.step(s, std::vector<double>{rng.normal()}, rng);
    CHECK(r.next_state[0] * r.next_state[0] + r.next_state[1] * r.next_state[1] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(r.next_state[2]) <= 8.0);
    CHECK(r.reward <= 0.0);
    s = r.next_state;
  }
}

TEST_CASE("collect records shapes, horizon cutoffs and episode returns") {
  Rng rng(34, 1);
  EnvOptions opts;
  opts.chain_horizon = 7;
  EnvInstance env = make_env("chain_mdp", 3, opts);
  const Policy pol = random_chain_policy(5, 2, rng);
  const RolloutBatch b = collect(env, pol, 40, rng);
  CHECK(b.size() == 40);
  CHECK(b.states.cols() == 5);
  CHECK(b.actions.cols() == 1);
  CHECK(b.episodes.size() == 5);
  std::size_t start = 0;
  for (const EpisodeRecord& ep : b.episodes) {
    CHECK(ep.length == 7);
    CHECK(ep.end_index + 1 - start == 7);
    double total = 0.0;
    for (std::size_t t = start; t <= ep.end_index; ++t) total += b.rewards[t];
    CHECK(ep.episode_return == doctest::Approx(total).epsilon(1e-14));
    CHECK(b.dones[ep.end_index] == 1);
    start = ep.end_index + 1;
  }
  for (std::size_t t = 0; t + 1 < b.size(); ++t) {
    if (!b.dones[t]) CHECK(b.next_states.row(t)[0] == b.states.row(t + 1)[0]);
  }
}

TEST_CASE("GAE targets match the truncated discounted sum of TD errors") {
  Rng rng(35, 1);
  RolloutBatch b;
  const std::size_t n = 30;
  b.states = oracle::random_matrix(n, 2, rng);
  b.next_states = oracle::random_matrix(n, 2, rng);
  b.actions = Matrix(n, 1);
  b.rewards = oracle::random_vector(n, rng);
  b.dones.assign(n, 0);
  b.dones[9] = b.dones[20] = 1;
  const ValueFn v = [](const Matrix& s) {
    Vector out(s.rows());
    for (std::size_t i = 0; i < s.rows(); ++i) out[i] = 0.3 * s(i, 0) - s(i, 1);
    return out;
  };
  for (double lam : {0.0, 0.95, 1.0}) {
    const double gamma = 0.97;
    compute_targets(b, v, gamma, lam);
    const Vector vs = v(b.states), vn = v(b.next_states);
    for (std::size_t t = 0; t < n; ++t) {
      double adv = 0.0, coef = 1.0;
      for (std::size_t u = t; u < n; ++u) {
        const double nd = b.dones[u] ? 0.0 : 1.0;
        adv += coef * (b.rewards[u] + gamma * nd * vn[u] - vs[u]);
        if (b.dones[u]) break;
        coef *= gamma * lam;
      }
      CHECK(b.advantages[t] == doctest::Approx(adv).epsilon(1e-12).scale(1e-12));
      CHECK(b.q_targets[t] == doctest::Approx(adv + vs[t]).epsilon(1e-12).scale(1e-12));
    }
  }
  CHECK_THROWS_AS(compute_targets(b, v, 1.5, 0.9), std::invalid_argument);
}

TEST_CASE("observation normalizer matches two-pass moments") {
  Rng rng(36, 1);
  ObsNormalizer norm(3);
  const Matrix x = oracle::random_matrix(500, 3, rng, 2.0);
  for (std::size_t i = 0; i < x.rows(); ++i) norm.update(x.row(i));
  for (std::size_t j = 0; j < 3; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) mean += x(i, j);
    mean /= 500.0;
    double var = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) var += (x(i, j) - mean) * (x(i, j) - mean);
    var /= 500.0;
    CHECK(norm.mean()[j] == doctest::Approx(mean).epsilon(1e-6));
    CHECK(norm.var()[j] == doctest::Approx(var).epsilon(1e-6));
  }
}

TEST_CASE("environment instances round-trip through save/load") {
  Rng rng(37, 1);
  EnvInstance a = make_env("point_mass", 5);
  const Policy pol = Policy::gaussian(4, 2, {}, rng);
  (void)collect(a, pol, 17, rng);
  std::stringstream ss;
  a.save(ss);
  EnvInstance b = make_env("point_mass", 99);
  b.load(ss);
  Rng r1(1, 1), r2(1, 1);
  const RolloutBatch x = collect(a, pol, 300, r1);
  const RolloutBatch y = collect(b, pol, 300, r2);
  CHECK(x.states == y.states);
  CHECK(x.rewards == y.rewards);
  CHECK(x.episodes.size() == y.episodes.size());
}

TEST_CASE("unknown environment names list the valid ones") {
  try {
    (void)make_env("cartpole", 0);
    FAIL("expected invalid_argument");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("point_mass") != std::string::npos);
  }
  CHECK(env_names().size() == 3);
}
