#include "ccv/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <utility>

#include "ccv/kernels.hpp"
#include "ccv/serialize.hpp"

namespace ccv {
namespace {

constexpr const char* kCheckpointMagic = "ccv-checkpoint";
constexpr int kCheckpointVersion = 1;

Policy make_policy(const Environment& env, const PPOConfig& cfg, Rng& rng) {
  if (env.action_kind() == ActionKind::discrete) {
    return Policy::categorical(env.obs_dim(), env.num_actions(), cfg.hidden, rng);
  }
  return Policy::gaussian(env.obs_dim(), env.act_dim(), cfg.hidden, rng, cfg.initial_log_std);
}

Mlp make_value_net(std::size_t obs_dim, const std::vector<std::size_t>& hidden, Rng& rng) {
  std::vector<std::size_t> sizes{obs_dim};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(1);
  return Mlp::initialized(std::move(sizes), rng, std::sqrt(2.0), 1.0);
}

bool uses_fitted_baseline(const PPOConfig& cfg) {
  return cfg.cv_mode == CvMode::scalar || cfg.cv_mode == CvMode::layer || cfg.cv_mode == CvMode::coord;
}

double mean_abs(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += std::abs(x);
  return s / static_cast<double>(v.size());
}

CoordMatrix gather_coord(const CoordMatrix& m, std::span<const std::size_t> idx) {
  return CoordMatrix(gather_rows(m.values(), idx), m.column_of());
}

void write_adam(std::ostream& os, const std::string& tag, const Adam& a) {
  io::write_count(os, tag + ".t", a.steps());
  io::write_vector(os, tag + ".m", a.first_moment());
  io::write_vector(os, tag + ".v", a.second_moment());
}

void read_adam(std::istream& is, const std::string& tag, Adam& a) {
  const std::uint64_t t = io::read_count(is, tag + ".t");
  Vector m = io::read_vector(is, tag + ".m");
  Vector v = io::read_vector(is, tag + ".v");
  a.restore(t, std::move(m), std::move(v));
}

}  // namespace

void PPOConfig::validate() const {
  if (!(clip_eps > 0.0)) throw std::invalid_argument("PPOConfig: clip_eps must be > 0");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("PPOConfig: gamma must lie in [0, 1]");
  if (!(lambda_gae >= 0.0 && lambda_gae <= 1.0)) {
    throw std::invalid_argument("PPOConfig: lambda_gae must lie in [0, 1]");
  }
  if (steps_per_update == 0) throw std::invalid_argument("PPOConfig: steps_per_update must be >= 1");
  if (minibatches == 0) throw std::invalid_argument("PPOConfig: minibatches must be >= 1");
  if (cv_mode == CvMode::none) throw std::invalid_argument("PPOConfig: cv_mode none is not trainable");
  if (force_baseline_to_value && cv_mode != CvMode::coord) {
    throw std::invalid_argument("PPOConfig: force_baseline_to_value requires cv_mode coord");
  }
  fit.validate();
}

std::size_t PPOConfig::num_updates() const {
  return std::max<std::size_t>(1, total_steps / steps_per_update);
}

// --- reward scaling ------------------------------------------------------------

void RewardScaler::observe(double reward, bool done, double gamma) {
  ret_ = ret_ * gamma + reward;
  const double total = count_ + 1.0;
  const double delta = ret_ - mean_;
  mean_ += delta / total;
  var_ = (var_ * count_ + delta * delta * count_ / total) / total;
  count_ = total;
  if (done) ret_ = 0.0;
}

double RewardScaler::scale() const { return std::sqrt(var_ + 1e-8); }

void RewardScaler::save(std::ostream& os) const {
  io::write_vector(os, "reward_scaler", Vector{ret_, count_, mean_, var_});
}

void RewardScaler::load(std::istream& is) {
  const Vector v = io::read_vector(is, "reward_scaler");
  if (v.size() != 4) throw std::runtime_error("checkpoint: reward_scaler needs 4 values");
  ret_ = v[0];
  count_ = v[1];
  mean_ = v[2];
  var_ = v[3];
}

// --- state ---------------------------------------------------------------------

TrainState make_train_state(const std::string& env_name, const PPOConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  TrainState st;
  st.env_name = env_name;
  st.cv_mode = cfg.cv_mode;
  st.env.emplace(make_env(env_name, seed, cfg.env));
  const Environment& dyn = st.env->dynamics();
  Rng policy_rng(seed, 1);
  Rng value_rng(seed, 2);
  Rng baseline_rng(seed, 3);
  st.policy = make_policy(dyn, cfg, policy_rng);
  st.value_fn = make_value_net(dyn.obs_dim(), cfg.hidden, value_rng);
  if (uses_fitted_baseline(cfg)) {
    st.baseline.emplace(cfg.cv_mode, st.policy.layout(), dyn.obs_dim(), cfg.hidden, baseline_rng,
                        cfg.tied_baseline);
  }
  st.policy_opt = Adam(st.policy.dim());
  st.value_opt = Adam(st.value_fn.param_count());
  st.rng.reseed(seed, 4);
  st.fit_rng.reseed(seed, 6);
  return st;
}

// --- clipped objective ------------------------------------------------------------

ClippedRatio clipped_ratio(double ratio, double advantage, double eps) {
  const double omega = advantage >= 0.0 ? std::min(ratio, 1.0 + eps) : std::max(ratio, 1.0 - eps);
  return {omega, omega != ratio};
}

Matrix coord_advantages(std::span<const double> q_hat, const CoordMatrix& baseline) {
  require_dims(q_hat.size() == baseline.rows(), "coord_advantages: q_hat length != rows");
  Matrix adv(baseline.rows(), baseline.coords());
  const auto& col = baseline.column_of();
  for (std::size_t i = 0; i < adv.rows(); ++i) {
    auto b = baseline.values().row(i);
    auto a = adv.row(i);
    for (std::size_t j = 0; j < a.size(); ++j) a[j] = q_hat[i] - b[col[j]];
  }
  return adv;
}

Matrix coord_advantages(std::span<const double> q_hat, const BaselineNet& baseline,
                        const Matrix& states) {
  return coord_advantages(q_hat, baseline.predict(states));
}

void normalize_advantages(Matrix& adv, std::span<const double> reference, bool per_column) {
  const std::size_t n = adv.rows();
  if (n < 2) return;
  const auto stats = [n](auto get) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += get(i);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double dv = get(i) - mean;
      var += dv * dv;
    }
    return std::pair{mean, std::sqrt(var / static_cast<double>(n - 1)) + 1e-8};
  };
  if (per_column) {
    for (std::size_t j = 0; j < adv.cols(); ++j) {
      const auto [mean, sd] = stats([&](std::size_t i) { return adv(i, j); });
      for (std::size_t i = 0; i < n; ++i) adv(i, j) = (adv(i, j) - mean) / sd;
    }
    return;
  }
  require_dims(reference.size() == n, "normalize_advantages: reference length != rows");
  const auto [mean, sd] = stats([&](std::size_t i) { return reference[i]; });
  for (double& v : adv.data()) v = (v - mean) / sd;
}

PpoGradient coord_ppo_gradient(const ScoreMatrix& scores, std::span<const double> ratios,
                               const Matrix& adv, double eps) {
  const std::size_t n = scores.rows();
  const std::size_t d = scores.cols();
  require_dims(ratios.size() == n && adv.rows() == n && adv.cols() == d,
               "coord_ppo_gradient: shape mismatch");
  require_dims(n >= 1, "coord_ppo_gradient: empty batch");
  const auto& k = kernels::active();
  PpoGradient out{Vector(d, 0.0), 0.0};
  const double scale = 1.0 / static_cast<double>(n);
  std::size_t clipped = 0;
  for (std::size_t i = 0; i < n; ++i) {
    clipped += k.clipped_coord_accumulate(scores.row(i).data(), adv.row(i).data(), ratios[i], eps,
                                          scale, out.grad.data(), d);
  }
  out.clip_fraction = static_cast<double>(clipped) / static_cast<double>(n * d);
  return out;
}

PpoGradient coord_ppo_gradient(const ScoreMatrix& scores, std::span<const double> ratios,
                               const CoordMatrix& adv, double eps) {
  const std::size_t n = scores.rows();
  const std::size_t d = scores.cols();
  require_dims(ratios.size() == n && adv.rows() == n && adv.coords() == d,
               "coord_ppo_gradient: shape mismatch");
  require_dims(n >= 1, "coord_ppo_gradient: empty batch");
  const auto& k = kernels::active();
  PpoGradient out{Vector(d, 0.0), 0.0};
  const double scale = 1.0 / static_cast<double>(n);
  Vector row(adv.is_identity() ? 0 : d);
  std::size_t clipped = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* a = adv.values().row(i).data();
    if (!adv.is_identity()) {
      adv.expand_row(i, row);
      a = row.data();
    }
    clipped += k.clipped_coord_accumulate(scores.row(i).data(), a, ratios[i], eps, scale,
                                          out.grad.data(), d);
  }
  out.clip_fraction = static_cast<double>(clipped) / static_cast<double>(n * d);
  return out;
}

CoordMatrix compact_advantages(std::span<const double> q_hat, const CoordMatrix& baseline) {
  require_dims(q_hat.size() == baseline.rows(), "compact_advantages: q_hat length != rows");
  Matrix v(baseline.rows(), baseline.width());
  for (std::size_t i = 0; i < v.rows(); ++i) {
    auto b = baseline.values().row(i);
    auto a = v.row(i);
    for (std::size_t c = 0; c < a.size(); ++c) a[c] = q_hat[i] - b[c];
  }
  return CoordMatrix(std::move(v), baseline.column_of());
}

PpoGradient scalar_ppo_gradient(const ScoreMatrix& scores, std::span<const double> ratios,
                                std::span<const double> adv, double eps) {
  const std::size_t n = scores.rows();
  const std::size_t d = scores.cols();
  require_dims(ratios.size() == n && adv.size() == n, "scalar_ppo_gradient: shape mismatch");
  PpoGradient out{Vector(d, 0.0), 0.0};
  std::size_t clipped = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const ClippedRatio c = clipped_ratio(ratios[i], adv[i], eps);
    if (c.clipped) {
      ++clipped;
      continue;
    }
    auto s = scores.row(i);
    for (std::size_t j = 0; j < d; ++j) out.grad[j] += c.omega * s[j] * adv[i] / static_cast<double>(n);
  }
  out.clip_fraction = n > 0 ? static_cast<double>(clipped) / static_cast<double>(n) : 0.0;
  return out;
}

double ppo_surrogate(std::span<const double> ratios, std::span<const double> adv, double eps) {
  require_dims(ratios.size() == adv.size() && !adv.empty(), "ppo_surrogate: shape mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < adv.size(); ++i) {
    const double clipped = std::clamp(ratios[i], 1.0 - eps, 1.0 + eps);
    total += std::min(ratios[i] * adv[i], clipped * adv[i]);
  }
  return total / static_cast<double>(adv.size());
}

// --- value function -----------------------------------------------------------------

namespace {

// Loss sum over rows and, optionally, output seeds of the scaled loss.
double value_rows(const Matrix& v, std::span<const double> q, std::span<const double> v_old,
                  double coef, double eps, double scale, Matrix* seeds) {
  double total = 0.0;
  for (std::size_t i = 0; i < v.rows(); ++i) {
    const double pred = v(i, 0);
    const double diff = pred - v_old[i];
    const double clipped_pred = v_old[i] + std::clamp(diff, -eps, eps);
    const double raw = (pred - q[i]) * (pred - q[i]);
    const double clp = (clipped_pred - q[i]) * (clipped_pred - q[i]);
    total += 0.5 * coef * std::max(raw, clp);
    if (seeds != nullptr) {
      double g = 0.0;
      if (raw >= clp) {
        g = 2.0 * (pred - q[i]);
      } else if (std::abs(diff) < eps) {
        g = 2.0 * (clipped_pred - q[i]);
      }
      (*seeds)(i, 0) = 0.5 * coef * g * scale;
    }
  }
  return total;
}

}  // namespace

double value_loss(const Mlp& value_fn, const Matrix& states, std::span<const double> q_hat,
                  std::span<const double> v_old, double value_coef, double eps) {
  const std::size_t n = states.rows();
  require_dims(n >= 1 && q_hat.size() == n && v_old.size() == n, "value_loss: shape mismatch");
  const Matrix v = forward_batch(value_fn, states).output();
  return value_rows(v, q_hat, v_old, value_coef, eps, 1.0, nullptr) / static_cast<double>(n);
}

ValueReport value_update(Mlp& value_fn, Adam& opt, const RolloutBatch& batch, const PPOConfig& cfg,
                         double lr, Rng& rng) {
  require_dims(batch.has_targets(), "value_update: batch has no targets");
  const std::size_t n = batch.size();
  ValueReport report;
  Vector grad(value_fn.param_count());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (const auto& idx : minibatch_indices(n, cfg.minibatches, rng)) {
      const Matrix s = gather_rows(batch.states, idx);
      const Vector q = gather(batch.q_targets, idx);
      const Vector v_old = gather(batch.value_preds, idx);
      const BatchTape tape = forward_batch(value_fn, s);
      Matrix seeds(idx.size(), 1);
      const double inv = 1.0 / static_cast<double>(idx.size());
      const double loss = value_rows(tape.output(), q, v_old, cfg.value_coef, cfg.clip_eps, inv, &seeds) * inv;
      if (!std::isfinite(loss)) throw NumericError("value_update: non-finite value loss");
      std::fill(grad.begin(), grad.end(), 0.0);
      backward_batch(value_fn, tape, seeds, grad);
      clip_grad_norm(grad, cfg.max_grad_norm);
      opt.step(value_fn.mutable_params(), grad, lr);
      ++report.steps;
    }
  }
  report.loss = value_loss(value_fn, batch.states, batch.q_targets, batch.value_preds,
                           cfg.value_coef, cfg.clip_eps);
  return report;
}

// --- training loop -------------------------------------------------------------------

double evaluate_policy(const std::string& env_name, const Policy& policy, const EnvOptions& opts,
                       std::size_t episodes, std::uint64_t seed) {
  if (episodes == 0) return 0.0;
  EnvInstance env = make_env(env_name, seed ^ 0x5EED5EEDull, opts);
  Rng rng(seed, 5);
  double total = 0.0;
  std::size_t done = 0;
  while (done < episodes) {
    const Vector action = policy.sample(env.state(), rng);
    const EnvInstance::Step step = env.step(action);
    if (step.done) {
      total += step.episode_return;
      ++done;
    }
  }
  return total / static_cast<double>(episodes);
}

UpdateDiagnostics train_update(TrainState& st, const PPOConfig& cfg, std::vector<CurveRecord>& curve) {
  if (!st.env) throw std::logic_error("train_update: state has no environment");
  UpdateDiagnostics diag;
  diag.update = st.update;
  const double frac = cfg.anneal_lr ? 1.0 - static_cast<double>(st.update) / static_cast<double>(cfg.num_updates())
                                    : 1.0;
  const double lr = cfg.lr * std::max(frac, 0.0);
  diag.lr = lr;

  RolloutBatch batch = collect(*st.env, st.policy, cfg.steps_per_update, st.rng);
  for (const EpisodeRecord& ep : batch.episodes) {
    if (!std::isfinite(ep.episode_return)) {
      throw DivergenceError("non-finite episode return at update " + std::to_string(st.update));
    }
    curve.push_back({st.step + ep.end_index + 1, ++st.episodes, ep.episode_return});
  }
  if (cfg.scale_rewards) {
    for (std::size_t t = 0; t < batch.size(); ++t) {
      st.reward_scaler.observe(batch.rewards[t], batch.dones[t] != 0, cfg.gamma);
      batch.rewards[t] /= st.reward_scaler.scale();
    }
  }
  compute_targets(batch, value_function(st.value_fn), cfg.gamma, cfg.lambda_gae);
  const std::size_t n = batch.size();
  const std::size_t d = st.policy.dim();
  const Vector old_log_probs = st.policy.log_probs(batch.states, batch.actions);

  CoordMatrix base;
  if (cfg.cv_mode == CvMode::value) {
    base = CoordMatrix::broadcast(batch.value_preds, d);
  } else if (cfg.force_baseline_to_value) {
    Matrix copies(n, d);
    for (std::size_t i = 0; i < n; ++i) {
      auto r = copies.row(i);
      std::fill(r.begin(), r.end(), batch.value_preds[i]);
    }
    base = CoordMatrix::full(std::move(copies));
  } else {
    FitConfig fit_cfg = cfg.fit;
    fit_cfg.lr = cfg.fit.lr * std::max(frac, 0.0);
    FitReport fr;
    if (cfg.independent_sample) {
      RolloutBatch fresh = collect(*st.env, st.policy, cfg.steps_per_update, st.rng);
      if (cfg.scale_rewards) {
        for (double& r : fresh.rewards) r /= st.reward_scaler.scale();
      }
      compute_targets(fresh, value_function(st.value_fn), cfg.gamma, cfg.lambda_gae);
      fr = fit(*st.baseline, fresh, st.policy.score_matrix(fresh.states, fresh.actions), fit_cfg, st.fit_rng);
    } else {
      fr = fit(*st.baseline, batch, st.policy.score_matrix(batch.states, batch.actions), fit_cfg, st.fit_rng);
    }
    diag.baseline_loss_before = fr.loss_before;
    diag.baseline_loss_after = fr.loss_after;
    diag.baseline_reverted = fr.reverted;
    base = cfg.independent_sample ? st.baseline->predict(batch.states)
                                  : CoordMatrix(std::move(fr.fitted), st.baseline->column_of());
  }

  {
    const std::size_t m = std::min<std::size_t>(n, 256);
    std::vector<std::size_t> head(m);
    for (std::size_t i = 0; i < m; ++i) head[i] = i;
    if (m >= 2) {
      const ScoreMatrix s = st.policy.score_matrix(gather_rows(batch.states, head), gather_rows(batch.actions, head));
      const PgEstimate est = pg_estimate(s, gather(batch.q_targets, head), {cfg.cv_mode, gather_coord(base, head)});
      diag.grad_trace_variance = trace_variance(est.rows).variance;
    }
  }

  std::size_t clip_batches = 0;
  Vector params = st.policy.params();
  Matrix s;
  Matrix a;
  ScoreMatrix scores;
  Vector lp;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (const auto& idx : minibatch_indices(n, cfg.minibatches, st.rng)) {
      gather_rows_into(batch.states, idx, s);
      gather_rows_into(batch.actions, idx, a);
      const Vector q = gather(batch.q_targets, idx);
      st.policy.score_matrix_into(s, a, scores, &lp);
      Vector ratios(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) ratios[i] = std::exp(lp[i] - old_log_probs[idx[i]]);
      CoordMatrix adv = compact_advantages(q, gather_coord(base, idx));
      if (cfg.normalize_advantages) {
        Vector ref(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) ref[i] = q[i] - batch.value_preds[idx[i]];
        normalize_advantages(adv.mutable_values(), ref, cfg.per_column_advantage_norm);
      }
      PpoGradient g = coord_ppo_gradient(scores, ratios, adv, cfg.clip_eps);
      if (cfg.entropy_coef != 0.0) st.policy.entropy_gradient(s, cfg.entropy_coef, g.grad);
      for (double& v : g.grad) v = -v;
      clip_grad_norm(g.grad, cfg.max_grad_norm);
      st.policy_opt.step(params, g.grad, lr);
      st.policy.set_params(params);
      diag.clip_fraction += g.clip_fraction;
      ++clip_batches;
    }
  }
  if (clip_batches > 0) diag.clip_fraction /= static_cast<double>(clip_batches);

  diag.value_loss = value_update(st.value_fn, st.value_opt, batch, cfg, lr, st.rng).loss;

  st.step += n;
  ++st.update;
  diag.step = st.step;
  diag.mean_abs_log_std = mean_abs(st.policy.log_std());
  if (diag.mean_abs_log_std > cfg.divergence_log_std || !all_finite(st.policy.params())) {
    std::ostringstream dump;
    dump << "training diverged at update " << st.update << ", step " << st.step
         << ": mean |log_std| = " << diag.mean_abs_log_std << ", log_std =";
    for (double v : st.policy.log_std()) dump << ' ' << v;
    throw DivergenceError(dump.str());
  }
  return diag;
}

TrainResult train(const std::string& env_name, const PPOConfig& cfg, std::uint64_t seed,
                  const UpdateCallback& on_update, std::optional<TrainState> resume) {
  cfg.validate();
  TrainResult result{resume ? std::move(*resume) : make_train_state(env_name, cfg, seed), {}, {}, 0.0};
  TrainState& st = result.state;
  if (st.cv_mode != cfg.cv_mode) throw std::invalid_argument("train: resumed state has a different cv_mode");
  result.initial_return = evaluate_policy(env_name, st.policy, cfg.env, cfg.eval_episodes, seed);
  const std::size_t updates = cfg.num_updates();
  while (st.update < updates) {
    UpdateDiagnostics diag = train_update(st, cfg, result.curve);
    if (on_update) on_update(st, diag);
    result.diagnostics.push_back(diag);
  }
  return result;
}

// --- checkpoints ---------------------------------------------------------------------

void save_checkpoint(const TrainState& st, const std::string& path) {
  std::ostringstream os;
  os << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  os << "env " << st.env_name << '\n';
  os << "cv_mode " << cv_mode_name(st.cv_mode) << '\n';
  io::write_count(os, "step", st.step);
  io::write_count(os, "update", st.update);
  io::write_count(os, "episodes", st.episodes);
  io::write_vector(os, "policy", st.policy.params());
  write_adam(os, "policy_adam", st.policy_opt);
  io::write_vector(os, "value", st.value_fn.params());
  write_adam(os, "value_adam", st.value_opt);
  io::write_count(os, "baseline", st.baseline ? 1 : 0);
  if (st.baseline) {
    io::write_count(os, "baseline.tied", st.baseline->tied() ? 1 : 0);
    io::write_vector(os, "baseline.params", st.baseline->net().params());
    io::write_vector(os, "baseline.old", st.baseline->old_net().params());
    io::write_count(os, "baseline.snapshots", st.baseline->snapshot_count());
    write_adam(os, "baseline_adam", st.baseline->optimizer());
  }
  os << "rng " << st.rng << '\n';
  os << "fit_rng " << st.fit_rng << '\n';
  st.env->save(os);
  st.reward_scaler.save(os);
  os << "end\n";
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write checkpoint '" + path + "'");
  f << os.str();
  if (!f) throw std::runtime_error("error writing checkpoint '" + path + "'");
}

TrainState load_checkpoint(const std::string& path, const PPOConfig& cfg) {
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    throw std::runtime_error("checkpoint '" + path +
                             "' not found; run `ccv train` first or pass a valid checkpoint path");
  }
  io::expect(is, kCheckpointMagic);
  int version = 0;
  is >> version;
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint '" + path + "' has unsupported version " + std::to_string(version));
  }
  std::string env_name;
  std::string mode;
  io::expect(is, "env");
  is >> env_name;
  io::expect(is, "cv_mode");
  is >> mode;
  PPOConfig c = cfg;
  c.cv_mode = parse_cv_mode(mode);
  c.force_baseline_to_value = false;
  TrainState st = make_train_state(env_name, c, 0);
  st.step = io::read_count(is, "step");
  st.update = io::read_count(is, "update");
  st.episodes = io::read_count(is, "episodes");
  const Vector policy = io::read_vector(is, "policy");
  require_dims(policy.size() == st.policy.dim(), "checkpoint: policy size does not match the configured network");
  st.policy.set_params(policy);
  read_adam(is, "policy_adam", st.policy_opt);
  const Vector value = io::read_vector(is, "value");
  require_dims(value.size() == st.value_fn.param_count(), "checkpoint: value size does not match the configured network");
  st.value_fn.set_params(value);
  read_adam(is, "value_adam", st.value_opt);
  const bool has_baseline = io::read_count(is, "baseline") != 0;
  if (has_baseline != st.baseline.has_value()) throw std::runtime_error("checkpoint: baseline presence mismatch");
  if (has_baseline) {
    const bool tied = io::read_count(is, "baseline.tied") != 0;
    if (tied != st.baseline->tied()) {
      Rng unused(0, 3);
      st.baseline.emplace(c.cv_mode, st.policy.layout(), st.policy.obs_dim(), c.hidden, unused, tied);
    }
    const Vector params = io::read_vector(is, "baseline.params");
    const Vector old = io::read_vector(is, "baseline.old");
    require_dims(params.size() == st.baseline->net().param_count() && old.size() == params.size(),
                 "checkpoint: baseline size does not match the configured network");
    st.baseline->mutable_net().set_params(params);
    st.baseline->restore_snapshot(old, io::read_count(is, "baseline.snapshots"));
    read_adam(is, "baseline_adam", st.baseline->optimizer());
  }
  io::expect(is, "rng");
  is >> st.rng;
  io::expect(is, "fit_rng");
  is >> st.fit_rng;
  st.env->load(is);
  st.reward_scaler.load(is);
  io::expect(is, "end");
  if (!is) throw std::runtime_error("checkpoint '" + path + "' is truncated");
  return st;
}

}  // namespace ccv
