#pragma once

// Exact enumeration of every (state, action) pair of a chain MDP under a
// categorical policy, weighted by the normalized discounted occupancy.

#include <vector>

#include "ccv/estimators.hpp"
#include "ccv/policy.hpp"
#include "oracles.hpp"

namespace ccv::oracle {

struct Enumeration {
  ScoreMatrix scores;          // one row per (s, a)
  std::vector<double> q;       // Q(s, a)
  std::vector<double> v;       // V(s) of the row's state
  std::vector<double> probs;   // d(s) pi(a|s)
  StateGroups groups;          // row -> state
  std::vector<double> state_values;
};

inline Policy random_chain_policy(std::size_t k, std::size_t m, Rng& rng, double scale = 1.0,
                                  std::vector<std::size_t> hidden = {}) {
  Policy pol = Policy::categorical(k, m, hidden, rng);
  Vector p = pol.params();
  for (double& x : p) x = scale * rng.normal();
  pol.set_params(p);
  return pol;
}

inline Enumeration enumerate(const ChainMdp& env, const Policy& pol, double gamma) {
  const ChainModel& m = env.model();
  Matrix pi(m.num_states, m.num_actions);
  for (std::size_t s = 0; s < m.num_states; ++s) {
    const Vector p = pol.probabilities(env.one_hot(s));
    std::copy(p.begin(), p.end(), pi.row(s).begin());
  }
  const auto values = solve_values(m, pi, gamma);
  const auto occupancy = solve_occupancy(m, pi, gamma);
  Enumeration e;
  const std::size_t n = m.num_states * m.num_actions;
  e.scores = Matrix(n, pol.dim());
  e.groups.group_of.resize(n);
  e.groups.num_groups = m.num_states;
  e.state_values = values;
  for (std::size_t s = 0; s < m.num_states; ++s) {
    const auto q = solve_q(m, gamma, s, values);
    for (std::size_t a = 0; a < m.num_actions; ++a) {
      const std::size_t i = s * m.num_actions + a;
      pol.score(env.one_hot(s), std::vector<double>{static_cast<double>(a)}, e.scores.row(i));
      e.q.push_back(q[a]);
      e.v.push_back(values[s]);
      e.probs.push_back(occupancy[s] * pi(s, a));
      e.groups.group_of[i] = s;
    }
  }
  return e;
}

}  // namespace ccv::oracle
