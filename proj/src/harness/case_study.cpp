#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "ccv/harness.hpp"
#include "ccv/serialize.hpp"

namespace ccv::harness {
namespace {

constexpr std::size_t kChunk = 500;
constexpr std::uint64_t kFitStream = 201;
constexpr std::uint64_t kEvalStream = 202;
constexpr std::uint64_t kReferenceStream = 203;
constexpr std::uint64_t kFitRngStream = 204;

// Rollout of the frozen policy; rewards use the checkpoint's scale without updating it.
RolloutBatch frozen_rollout(const TrainState& st, const PPOConfig& p, std::size_t steps, std::uint64_t seed,
                            std::uint64_t stream) {
  Rng rng(seed, stream);
  EnvInstance env = make_env(st.env_name, rng.next_u64(), p.env);
  RolloutBatch batch = collect(env, st.policy, steps, rng);
  if (p.scale_rewards) {
    const double scale = st.reward_scaler.scale();
    for (double& r : batch.rewards) r /= scale;
  }
  compute_targets(batch, value_function(st.value_fn), p.gamma, p.lambda_gae);
  return batch;
}

// Body copied from the value net; every output row starts as the value output row.
void warm_start(BaselineNet& b, const Mlp& value) {
  Mlp& net = b.mutable_net();
  const std::size_t last = net.num_layers() - 1;
  require_dims(value.num_layers() == net.num_layers() && value.output_dim() == 1 &&
                   value.weight_offset(last) == net.weight_offset(last),
               "warm_start: value net and baseline net bodies differ");
  std::span<double> dst = net.mutable_params();
  const std::span<const double> src = value.params();
  std::copy(src.begin(), src.begin() + static_cast<std::ptrdiff_t>(value.weight_offset(last)), dst.begin());
  const std::size_t in = net.sizes()[last];
  double* w = net.mutable_weight(last);
  double* bias = net.mutable_bias(last);
  for (std::size_t k = 0; k < net.output_dim(); ++k) {
    std::copy(value.weight(last), value.weight(last) + in, w + k * in);
    bias[k] = value.bias(last)[0];
  }
}

Matrix rows_of(const Matrix& m, std::size_t begin, std::size_t end) {
  std::vector<std::size_t> idx(end - begin);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = begin + i;
  return gather_rows(m, idx);
}

struct Method {
  std::string name;
  CvMode mode;
  const BaselineNet* net = nullptr;
};

BaselineValues baseline_for(const Method& m, const Matrix& states, std::span<const double> value_preds,
                            std::size_t d) {
  switch (m.mode) {
    case CvMode::none:
      return BaselineValues::none(states.rows(), d);
    case CvMode::value:
      return {CvMode::value, CoordMatrix::broadcast(value_preds, d)};
    default:
      return m.net->values(states);
  }
}

// Streaming squared error of block means against the reference, one block size.
struct MseTracker {
  std::size_t size;
  std::size_t filled = 0;
  Vector sum;
  std::vector<double> errors;

  void add(std::span<const double> row, const Vector& reference) {
    for (std::size_t j = 0; j < row.size(); ++j) sum[j] += row[j];
    if (++filled < size) return;
    double e = 0.0;
    for (std::size_t j = 0; j < sum.size(); ++j) {
      const double diff = sum[j] / static_cast<double>(size) - reference[j];
      e += diff * diff;
    }
    errors.push_back(e);
    std::fill(sum.begin(), sum.end(), 0.0);
    filled = 0;
  }
};

std::vector<HistogramBin> log_histogram(const std::string& kind, const std::vector<double>& values, std::size_t bins) {
  std::vector<double> logs;
  logs.reserve(values.size());
  for (double v : values) logs.push_back(std::log10(std::max(v, 1e-300)));
  if (logs.empty() || bins == 0) return {};
  const auto [lo_it, hi_it] = std::minmax_element(logs.begin(), logs.end());
  const double lo = *lo_it;
  const double hi = *hi_it > lo ? *hi_it : lo + 1.0;
  const double width = (hi - lo) / static_cast<double>(bins);
  std::vector<HistogramBin> out(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    out[b] = {kind, std::pow(10.0, lo + width * static_cast<double>(b)),
              std::pow(10.0, lo + width * static_cast<double>(b + 1)), 0};
  }
  for (double x : logs) {
    const auto b = std::min(bins - 1, static_cast<std::size_t>((x - lo) / width));
    ++out[b].count;
  }
  return out;
}

}  // namespace

const CaseStudyRow& CaseStudyReport::row(const std::string& method) const {
  for (const CaseStudyRow& r : rows) {
    if (r.method == method) return r;
  }
  throw std::out_of_range("case study: no row '" + method + "'");
}

CaseStudyReport run_case_study(const TrainState& frozen, const ExperimentConfig& cfg, std::ostream& log) {
  const CaseStudyConfig& cs = cfg.case_study;
  const PPOConfig& p = cfg.ppo;
  require_dims(!cs.mse_sizes.empty() && cs.fit_steps >= 2 && cs.eval_steps >= 2 && cs.reference_factor >= 1,
               "case study: sample sizes must be positive");
  for (std::size_t k : cs.mse_sizes) {
    require_dims(k >= 1 && k <= cs.eval_steps, "case study: mse sample size outside [1, eval_steps]");
  }
  const Policy& policy = frozen.policy;
  const std::size_t d = policy.dim();
  const std::size_t obs = policy.obs_dim();

  CaseStudyReport report;
  report.fit_samples = cs.fit_steps;
  report.eval_samples = cs.eval_steps;
  report.reference_samples = cs.eval_steps * cs.reference_factor;

  log << "case study on " << frozen.env_name << " (d = " << d << "): fit " << report.fit_samples << ", eval "
      << report.eval_samples << ", reference " << report.reference_samples << " steps\n";

  // Fitted baselines on their own sample.
  const RolloutBatch fit_batch = frozen_rollout(frozen, p, cs.fit_steps, cfg.seed, kFitStream);
  std::vector<BaselineNet> nets;
  std::vector<Method> methods{{"none", CvMode::none}, {"value", CvMode::value}};
  {
    const ScoreMatrix fit_scores = policy.score_matrix(fit_batch.states, fit_batch.actions);
    Rng fit_rng(cfg.seed, kFitRngStream);
    const std::vector<std::pair<std::string, CvMode>> fitted{
        {"value_refit", CvMode::scalar}, {"scalar", CvMode::scalar}, {"layer", CvMode::layer}, {"coord", CvMode::coord}};
    nets.reserve(fitted.size());
    for (const auto& [name, mode] : fitted) {
      Rng init(cfg.seed, 3);
      BaselineNet& net = nets.emplace_back(mode, policy.layout(), obs, p.hidden, init);
      warm_start(net, frozen.value_fn);
      FitConfig fc = p.fit;
      fc.lambda = name == "value_refit" ? 1.0 : cs.lambda;
      fc.rho = cs.rho;
      fc.epochs = cs.fit_epochs;
      fc.minibatches = cs.fit_minibatches;
      fc.lr = cs.fit_lr;
      const FitReport fr = fit(net, fit_batch, fit_scores, fc, fit_rng);
      log << "  fit " << std::left << std::setw(12) << name << std::right << " loss " << fr.loss_before << " -> "
          << fr.loss_after << (fr.reverted ? " (reverted)" : "") << '\n';
    }
  }
  for (std::size_t k = 0; k < nets.size(); ++k) {
    static const char* names[] = {"value_refit", "scalar", "layer", "coord"};
    methods.push_back({names[k], nets[k].mode(), &nets[k]});
  }

  // Reference gradient: mean over a larger third sample with the learned value baseline.
  Vector reference(d, 0.0);
  {
    const RolloutBatch ref = frozen_rollout(frozen, p, report.reference_samples, cfg.seed, kReferenceStream);
    const Method value{"value", CvMode::value};
    for (std::size_t b = 0; b < ref.size(); b += kChunk) {
      const std::size_t e = std::min(ref.size(), b + kChunk);
      const Matrix s = rows_of(ref.states, b, e);
      const ScoreMatrix scores = policy.score_matrix(s, rows_of(ref.actions, b, e));
      const std::span<const double> q(ref.q_targets.data() + b, e - b);
      const std::span<const double> v(ref.value_preds.data() + b, e - b);
      const PgEstimate est = pg_estimate(scores, q, baseline_for(value, s, v, d));
      for (std::size_t i = 0; i < est.rows.rows(); ++i) {
        const auto r = est.rows.row(i);
        for (std::size_t j = 0; j < d; ++j) reference[j] += r[j];
      }
    }
    for (double& x : reference) x /= static_cast<double>(ref.size());
  }

  // Streaming evaluation of every method on the eval sample.
  const RolloutBatch eval = frozen_rollout(frozen, p, cs.eval_steps, cfg.seed, kEvalStream);
  std::vector<TraceVarianceAccumulator> acc(methods.size(), TraceVarianceAccumulator(d));
  std::vector<std::vector<MseTracker>> mse(methods.size());
  for (auto& per_method : mse) {
    for (std::size_t k : cs.mse_sizes) per_method.push_back({k, 0, Vector(d, 0.0), {}});
  }
  std::vector<double> per_sample;
  per_sample.reserve(eval.size());
  Vector per_coord(d, 0.0);
  for (std::size_t b = 0; b < eval.size(); b += kChunk) {
    const std::size_t e = std::min(eval.size(), b + kChunk);
    const Matrix s = rows_of(eval.states, b, e);
    const ScoreMatrix scores = policy.score_matrix(s, rows_of(eval.actions, b, e));
    const std::span<const double> q(eval.q_targets.data() + b, e - b);
    const std::span<const double> v(eval.value_preds.data() + b, e - b);
    for (std::size_t i = 0; i < scores.rows(); ++i) {
      const auto r = scores.row(i);
      double ss = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        ss += r[j] * r[j];
        per_coord[j] += r[j] * r[j];
      }
      per_sample.push_back(ss / static_cast<double>(d));
    }
    for (std::size_t m = 0; m < methods.size(); ++m) {
      const PgEstimate est = pg_estimate(scores, q, baseline_for(methods[m], s, v, d));
      for (std::size_t i = 0; i < est.rows.rows(); ++i) {
        acc[m].add(est.rows.row(i));
        for (MseTracker& t : mse[m]) t.add(est.rows.row(i), reference);
      }
    }
  }
  for (double& x : per_coord) x /= static_cast<double>(eval.size());

  for (std::size_t m = 0; m < methods.size(); ++m) {
    const VarianceEstimate ve = acc[m].result();
    CaseStudyRow row{methods[m].name, ve.variance, ve.ci_lo, ve.ci_hi, 0.0, 0.0, 0.0, ve.n};
    for (const MseTracker& t : mse[m]) {
      const MeanSe ms = mean_se(t.errors);
      MsePoint pt{methods[m].name, t.size, ms.n, ms.mean, ms.mean - 1.96 * ms.se, ms.mean + 1.96 * ms.se};
      report.mse_curve.push_back(pt);
      row.mse = pt.mse;
      row.mse_ci_lo = pt.ci_lo;
      row.mse_ci_hi = pt.ci_hi;
    }
    report.rows.push_back(row);
  }
  for (HistogramBin& b : log_histogram("per_sample", per_sample, cs.histogram_bins)) report.histograms.push_back(b);
  for (HistogramBin& b : log_histogram("per_coordinate", per_coord, cs.histogram_bins)) report.histograms.push_back(b);

  log << '\n' << std::left << std::setw(13) << "method" << std::right << std::setw(14) << "variance" << std::setw(30)
      << "95% CI" << std::setw(14) << "MSE" << '\n';
  for (const CaseStudyRow& r : report.rows) {
    std::ostringstream ci;
    ci << std::setprecision(6) << '[' << r.ci_lo << ", " << r.ci_hi << ']';
    log << std::left << std::setw(13) << r.method << std::right << std::setprecision(6) << std::setw(14) << r.variance
        << std::setw(30) << ci.str() << std::setw(14) << r.mse << '\n';
  }
  log << std::defaultfloat;
  return report;
}

CaseStudyReport cmd_case_study(const ExperimentConfig& cfg, std::ostream& log) {
  const CaseStudyConfig& cs = cfg.case_study;
  cfg.ppo.validate();
  TrainState st;
  std::string path = cs.checkpoint;
  if (!path.empty()) {
    st = load_checkpoint(path, cfg.ppo);
  } else {
    PPOConfig p = cfg.ppo;
    p.cv_mode = CvMode::value;
    p.total_steps = cs.checkpoint_updates * p.steps_per_update;
    const std::filesystem::path dir = cell_dir(cfg.out, {cs.env, CvMode::value, cfg.seed, std::nullopt});
    path = (dir / ("checkpoint_" + std::to_string(p.total_steps))).string();
    if (std::filesystem::exists(path)) {
      log << "using existing checkpoint " << path << '\n';
      st = load_checkpoint(path, p);
    } else {
      log << "training a value-CV policy for " << cs.checkpoint_updates << " updates on " << cs.env << '\n';
      std::filesystem::create_directories(dir);
      TrainResult tr = train(cs.env, p, cfg.seed);
      save_checkpoint(tr.state, path);
      st = std::move(tr.state);
    }
  }

  CaseStudyReport report = run_case_study(st, cfg, log);
  report.checkpoint = path;

  std::filesystem::create_directories(cfg.out);
  {
    std::ofstream f(cfg.out / "config.ini", std::ios::binary | std::ios::trunc);
    write_config(f, cfg);
  }
  CsvWriter table(cfg.out / "case_study.csv", {"cv_mode", "variance", "ci_lo", "ci_hi", "mse", "n_eval"});
  for (const CaseStudyRow& r : report.rows) {
    table << r.method << r.variance << r.ci_lo << r.ci_hi << r.mse << std::uint64_t{r.n_eval};
    table.end_row();
  }
  table.close();
  CsvWriter curve(cfg.out / "case_study_mse.csv", {"cv_mode", "sample_size", "estimates", "mse", "ci_lo", "ci_hi"});
  for (const MsePoint& pt : report.mse_curve) {
    curve << pt.method << std::uint64_t{pt.sample_size} << std::uint64_t{pt.estimates} << pt.mse << pt.ci_lo << pt.ci_hi;
    curve.end_row();
  }
  curve.close();
  CsvWriter hist(cfg.out / "histograms.csv", {"kind", "lo", "hi", "count"});
  for (const HistogramBin& b : report.histograms) {
    hist << b.kind << b.lo << b.hi << std::uint64_t{b.count};
    hist.end_row();
  }
  hist.close();
  return report;
}

}  // namespace ccv::harness
