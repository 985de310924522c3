#pragma once

// Independent reference computations shared by the unit and acceptance tests.
// Nothing here calls into the code paths it is used to check.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <utility>
#include <vector>

#include "ccv/envs.hpp"
#include "ccv/linalg.hpp"
#include "ccv/rng.hpp"

namespace ccv::oracle {

// Fourth-order central difference of f at x along coordinate k.
inline double fd_partial(std::vector<double>& x, std::size_t k, const std::function<double()>& f,
                         double h = 1e-4) {
  const double saved = x[k];
  auto at = [&](double off) {
    x[k] = saved + off;
    return f();
  };
  const double d = 8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h));
  x[k] = saved;
  return d / (12.0 * h);
}

// Nodes and weights for E[g(Z)], Z ~ N(0, 1), by Golub-Welsch on the
// probabilists' Hermite recurrence.
inline std::pair<std::vector<double>, std::vector<double>> gauss_hermite(int n) {
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(n, n);
  for (int i = 1; i < n; ++i) {
    jac(i, i - 1) = jac(i - 1, i) = std::sqrt(static_cast<double>(i));
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jac);
  std::vector<double> nodes(n), weights(n);
  for (int i = 0; i < n; ++i) {
    nodes[i] = es.eigenvalues()(i);
    weights[i] = es.eigenvectors()(0, i) * es.eigenvectors()(0, i);
  }
  return {nodes, weights};
}

// Direct linear solve V = (I - gamma P_pi)^-1 r_pi on a finite model.
inline std::vector<double> solve_values(const ChainModel& m, const Matrix& pi, double gamma) {
  const auto K = static_cast<Eigen::Index>(m.num_states);
  Eigen::MatrixXd a = Eigen::MatrixXd::Identity(K, K);
  Eigen::VectorXd r = Eigen::VectorXd::Zero(K);
  for (std::size_t s = 0; s < m.num_states; ++s) {
    for (std::size_t act = 0; act < m.num_actions; ++act) {
      const double p = pi(s, act);
      r(static_cast<Eigen::Index>(s)) += p * m.reward(s, act);
      for (const auto& [next, prob] : m.transitions(s, act)) {
        a(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(next)) -= gamma * p * prob;
      }
    }
  }
  const Eigen::VectorXd v = a.partialPivLu().solve(r);
  return {v.data(), v.data() + K};
}

// Q(s, .) from state values.
inline std::vector<double> solve_q(const ChainModel& m, double gamma, std::size_t s, const std::vector<double>& v) {
  std::vector<double> q(m.num_actions);
  for (std::size_t act = 0; act < m.num_actions; ++act) {
    q[act] = m.reward(s, act);
    for (const auto& [next, prob] : m.transitions(s, act)) q[act] += gamma * prob * v[next];
  }
  return q;
}

// Normalized discounted occupancy by a linear solve: d = (1-g) (I - g P^T)^-1 mu0.
inline std::vector<double> solve_occupancy(const ChainModel& m, const Matrix& pi, double gamma) {
  const auto K = static_cast<Eigen::Index>(m.num_states);
  Eigen::MatrixXd a = Eigen::MatrixXd::Identity(K, K);
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(K);
  for (std::size_t s = 0; s < m.num_states; ++s) {
    mu(static_cast<Eigen::Index>(s)) = m.start[s];
    for (std::size_t act = 0; act < m.num_actions; ++act) {
      for (const auto& [next, prob] : m.transitions(s, act)) {
        a(static_cast<Eigen::Index>(next), static_cast<Eigen::Index>(s)) -= gamma * pi(s, act) * prob;
      }
    }
  }
  const Eigen::VectorXd d = (1.0 - gamma) * a.partialPivLu().solve(mu);
  return {d.data(), d.data() + K};
}

// Minimizes a one-dimensional function on [lo, hi] by repeated grid refinement.
inline double grid_argmin(const std::function<double(double)>& f, double lo, double hi, int points = 41,
                          int rounds = 40) {
  double best = lo;
  for (int r = 0; r < rounds; ++r) {
    double best_val = f(lo);
    best = lo;
    const double step = (hi - lo) / (points - 1);
    for (int i = 1; i < points; ++i) {
      const double x = lo + step * i;
      const double v = f(x);
      if (v < best_val) {
        best_val = v;
        best = x;
      }
    }
    lo = best - step;
    hi = best + step;
  }
  return best;
}

inline Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (double& x : m.data()) x = scale * rng.normal();
  return m;
}

inline std::vector<double> random_vector(std::size_t n, Rng& rng, double scale = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = scale * rng.normal();
  return v;
}

}  // namespace ccv::oracle
