#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>

#include "ccv/harness.hpp"

namespace ccv::harness {
namespace {

constexpr double kStep = 1e-4;

struct Checker {
  const GradcheckOptions& opts;
  GradcheckSuite suite;

  void compare(double analytic, double numeric) {
    if (opts.corrupt) analytic = analytic * (1.0 + 1e-3) + 1e-3;
    suite.worst_relative_error = std::max(suite.worst_relative_error, relative_error(analytic, numeric));
    ++suite.coordinates;
  }

  GradcheckSuite finish() {
    suite.passed = suite.coordinates > 0 && suite.worst_relative_error < opts.tolerance;
    return suite;
  }
};

// Fourth-order central stencil.
template <class F>
double central_difference(std::span<double> x, std::size_t k, F&& f) {
  const double saved = x[k];
  const auto at = [&](double offset) {
    x[k] = saved + offset;
    return f();
  };
  const double d = 8.0 * (at(kStep) - at(-kStep)) - (at(2.0 * kStep) - at(-2.0 * kStep));
  x[k] = saved;
  return d / (12.0 * kStep);
}

Vector normal_vector(std::size_t n, Rng& rng, double scale = 1.0) {
  Vector v(n);
  for (double& x : v) x = scale * rng.normal();
  return v;
}

Matrix normal_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  return Matrix(r, c, normal_vector(r * c, rng, scale));
}

GradcheckSuite check_mlp(const GradcheckOptions& opts) {
  Checker ck{opts, {"linalg_nn", 0, 0, 0.0, false}};
  Rng rng(opts.seed, 31);
  const std::vector<std::vector<std::size_t>> shapes{{1, 1}, {1, 3, 1}, {3, 5, 4, 2}, {4, 64, 64, 2}};
  for (const auto& sizes : shapes) {
    Mlp net = Mlp::initialized(sizes, rng, std::sqrt(2.0), 1.0);
    {
      Vector p(net.params().begin(), net.params().end());
      for (double& x : p) x += 0.1 * rng.normal();
      net.set_params(p);
    }
    const std::size_t n = 3;
    const Matrix x = normal_matrix(n, net.input_dim(), rng);
    const Matrix seeds = normal_matrix(n, net.output_dim(), rng);

    // Single example through backward_per_example, batch through backward_batch.
    const Vector analytic_one = backward_per_example(net, forward(net, x.row(0)), seeds.row(0));
    Vector analytic_batch(net.param_count(), 0.0);
    backward_batch(net, forward_batch(net, x), seeds, analytic_batch);

    Vector p(net.params().begin(), net.params().end());
    Mlp probe = net;
    const auto one = [&] {
      probe.set_params(p);
      const Tape t = forward(probe, x.row(0));
      double s = 0.0;
      for (std::size_t o = 0; o < probe.output_dim(); ++o) s += seeds(0, o) * t.output()[o];
      return s;
    };
    const auto batch = [&] {
      probe.set_params(p);
      const BatchTape t = forward_batch(probe, x);
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t o = 0; o < probe.output_dim(); ++o) s += seeds(i, o) * t.output()(i, o);
      }
      return s;
    };
    for (std::size_t k = 0; k < p.size(); ++k) {
      ck.compare(analytic_one[k], central_difference(p, k, one));
      ck.compare(analytic_batch[k], central_difference(p, k, batch));
    }
    ++ck.suite.cases;
  }
  return ck.finish();
}

Policy random_policy(bool gaussian, const std::vector<std::size_t>& hidden, std::size_t obs, std::size_t act,
                     Rng& rng) {
  Policy pol = gaussian ? Policy::gaussian(obs, act, hidden, rng, -0.3) : Policy::categorical(obs, act, hidden, rng);
  Vector p = pol.params();
  for (double& x : p) x += 0.2 * rng.normal();
  pol.set_params(p);
  return pol;
}

Matrix sample_actions(const Policy& pol, const Matrix& states, Rng& rng) {
  Matrix a(states.rows(), pol.action_dim());
  for (std::size_t i = 0; i < states.rows(); ++i) {
    const Vector v = pol.sample(states.row(i), rng);
    std::copy(v.begin(), v.end(), a.row(i).begin());
  }
  return a;
}

GradcheckSuite check_policy(const GradcheckOptions& opts) {
  Checker ck{opts, {"policy_score_matrix", 0, 0, 0.0, false}};
  Rng rng(opts.seed, 32);
  struct Case {
    bool gaussian;
    std::vector<std::size_t> hidden;
    std::size_t obs, act;
  };
  const std::vector<Case> cases{{true, {}, 1, 1}, {true, {8}, 3, 2}, {true, {64, 64}, 4, 2},
                                {false, {}, 2, 2}, {false, {8, 8}, 5, 3}, {false, {64, 64}, 5, 2}};
  for (const Case& c : cases) {
    const Policy pol = random_policy(c.gaussian, c.hidden, c.obs, c.act, rng);
    const std::size_t n = 3;
    const Matrix states = normal_matrix(n, c.obs, rng);
    const Matrix actions = sample_actions(pol, states, rng);
    const ScoreMatrix scores = pol.score_matrix(states, actions);
    Vector p = pol.params();
    Policy probe = pol;
    for (std::size_t i = 0; i < n; ++i) {
      const auto lp = [&] {
        probe.set_params(p);
        return probe.log_prob(states.row(i), actions.row(i));
      };
      for (std::size_t k = 0; k < p.size(); ++k) ck.compare(scores(i, k), central_difference(p, k, lp));
    }
    ++ck.suite.cases;
  }
  return ck.finish();
}

// Per-coordinate objective L_k(theta) = mean_i min(r_i A_ik, clip(r_i) A_ik); its
// k-th partial is the k-th entry of the clipped coordinate gradient.
GradcheckSuite check_ppo(const GradcheckOptions& opts) {
  Checker ck{opts, {"coord_ppo_gradient", 0, 0, 0.0, false}};
  Rng rng(opts.seed, 33);
  constexpr double eps = 0.2;
  const std::vector<std::pair<bool, std::vector<std::size_t>>> cases{
      {true, {8}}, {true, {16, 16}}, {false, {8}}, {false, {16, 16}}};
  for (const auto& [gaussian, hidden] : cases) {
    const Policy old = random_policy(gaussian, hidden, 4, gaussian ? 2 : 3, rng);
    const std::size_t n = 12;
    const Matrix states = normal_matrix(n, 4, rng);
    const Matrix actions = sample_actions(old, states, rng);
    const Vector old_lp = old.log_probs(states, actions);

    // Move away from theta_old so some samples clip, keeping every ratio off the kinks.
    Policy pol = old;
    Vector p;
    Vector ratios(n);
    for (int attempt = 0;; ++attempt) {
      if (attempt > 1000) throw std::runtime_error("gradcheck: no kink-free perturbation found");
      p = old.params();
      for (double& x : p) x += 0.05 * rng.normal();
      pol.set_params(p);
      const Vector lp = pol.log_probs(states, actions);
      bool ok = true;
      for (std::size_t i = 0; i < n; ++i) {
        ratios[i] = std::exp(lp[i] - old_lp[i]);
        ok = ok && std::abs(ratios[i] - (1.0 - eps)) > 1e-2 && std::abs(ratios[i] - (1.0 + eps)) > 1e-2;
      }
      if (ok) break;
    }
    const Matrix adv = normal_matrix(n, p.size(), rng);
    const PpoGradient g = coord_ppo_gradient(pol.score_matrix(states, actions), ratios, adv, eps);

    Policy probe = pol;
    for (std::size_t k = 0; k < p.size(); ++k) {
      const auto objective = [&] {
        probe.set_params(p);
        const Vector lp = probe.log_probs(states, actions);
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double r = std::exp(lp[i] - old_lp[i]);
          const double a = adv(i, k);
          s += std::min(r * a, std::clamp(r, 1.0 - eps, 1.0 + eps) * a);
        }
        return s / static_cast<double>(n);
      };
      ck.compare(g.grad[k], central_difference(p, k, objective));
    }
    ++ck.suite.cases;
  }
  return ck.finish();
}

}  // namespace

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-4});
}

std::vector<GradcheckSuite> cmd_gradcheck(const GradcheckOptions& opts, std::ostream& log) {
  std::vector<GradcheckSuite> suites{check_mlp(opts), check_policy(opts), check_ppo(opts)};
  for (const GradcheckSuite& s : suites) {
    log << std::left << std::setw(22) << s.name << std::right << std::setw(4) << s.cases << " cases"
        << std::setw(8) << s.coordinates << " coords  worst rel err " << std::scientific << std::setprecision(3)
        << s.worst_relative_error << std::defaultfloat << "  " << (s.passed ? "PASS" : "FAIL") << '\n';
  }
  return suites;
}

}  // namespace ccv::harness
