#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ccv/estimators.hpp"
#include "ccv/ppo.hpp"

namespace ccv::harness {

struct CaseStudyConfig {
  std::string env = "point_mass";
  // Frozen policy source; when empty a value-CV policy is trained in place
  // for `checkpoint_updates` updates and saved under the output directory.
  std::string checkpoint;
  std::size_t checkpoint_updates = 50;
  std::size_t fit_steps = 10000;
  std::size_t eval_steps = 10000;
  std::size_t reference_factor = 3;
  double lambda = 0.1;
  double rho = 0.0;
  std::size_t fit_epochs = 5;
  std::size_t fit_minibatches = 32;
  double fit_lr = 3e-4;
  // Per-estimate sample sizes of the MSE curve; the last one fills the
  // `mse` column of the main table.
  std::vector<std::size_t> mse_sizes{100, 300, 1000};
  std::size_t histogram_bins = 30;
};

struct ExperimentConfig {
  std::vector<std::string> envs{"point_mass", "chain_mdp"};
  std::vector<CvMode> cv_modes{CvMode::value, CvMode::scalar, CvMode::layer, CvMode::coord};
  std::uint64_t seed = 0;
  std::size_t num_seeds = 4;
  std::filesystem::path out = "runs";
  std::size_t workers = 1;
  // Save a checkpoint every this many updates (0: only after the last one).
  std::size_t checkpoint_every = 0;
  bool write_plots = true;
  PPOConfig ppo;
  CaseStudyConfig case_study;
  std::vector<double> sweep_lambdas{0.0, 0.01, 0.1, 1.0};
  std::vector<double> sweep_rhos{0.0, 0.1, 1.0};

  std::vector<std::uint64_t> seeds() const;
  void validate() const;
};

// Key = value text with [sections]; unknown keys are rejected.
ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base = {});
ExperimentConfig parse_config(std::istream& is, ExperimentConfig base = {});
// Full effective configuration in the same format.
void write_config(std::ostream& os, const ExperimentConfig& cfg);

// --- CSV -------------------------------------------------------------------

// Writes rows with a header; numbers use the shortest round-trip decimal form.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header);
  CsvWriter& operator<<(const std::string& cell);
  CsvWriter& operator<<(const char* cell) { return *this << std::string(cell); }
  CsvWriter& operator<<(double v);
  CsvWriter& operator<<(std::uint64_t v);
  void end_row();
  void close();

 private:
  std::filesystem::path path_;
  std::string buffer_;
  std::size_t columns_;
  std::size_t cell_ = 0;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const;
};

CsvTable read_csv(const std::filesystem::path& path);

// --- statistics --------------------------------------------------------------

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
  std::size_t n = 0;
};

// Mean and standard error (sample std / sqrt(n); 0 for n < 2).
MeanSe mean_se(const std::vector<double>& xs);

// Mean return over all episodes and over the last `last` episodes.
std::pair<double, double> curve_means(const std::vector<CurveRecord>& curve, std::size_t last = 100);

// --- training ----------------------------------------------------------------

struct CellKey {
  std::string env;
  CvMode cv_mode = CvMode::value;
  std::uint64_t seed = 0;
  std::optional<std::pair<double, double>> lambda_rho;  // set for sweep cells
};

struct CellResult {
  CellKey key;
  bool ok = false;
  std::string error;
  std::vector<CurveRecord> curve;
  std::vector<UpdateDiagnostics> diagnostics;
  double initial_return = 0.0;
  double mean_all = 0.0;
  double mean_last100 = 0.0;
  double seconds = 0.0;
};

std::filesystem::path cell_dir(const std::filesystem::path& out, const CellKey& key);

// Trains one cell, writing checkpoints under cell_dir. Failures are reported in
// the result rather than thrown.
CellResult run_cell(const ExperimentConfig& cfg, const CellKey& key);

// Runs `count` independent jobs on up to `workers` threads; job i writes slot i.
void parallel_for(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& job);

struct SummaryRow {
  std::string env;
  CvMode cv_mode = CvMode::value;
  std::size_t seeds_ok = 0;
  std::size_t seeds_failed = 0;
  MeanSe initial;
  MeanSe all;
  MeanSe last100;
  // (method - value) / |value| on this env; absent without a value row.
  std::optional<double> improve_all;
  std::optional<double> improve_last100;
};

struct ImproveRow {
  CvMode cv_mode = CvMode::value;
  double improve_all = 0.0;
  double improve_last100 = 0.0;
  std::size_t envs = 0;
};

struct TrainSummary {
  std::vector<SummaryRow> rows;
  // Mean over envs of the per-env improvement.
  std::vector<ImproveRow> improve;
  std::vector<CellResult> cells;
};

TrainSummary summarize(std::vector<CellResult> cells);

TrainSummary cmd_train(const ExperimentConfig& cfg, std::ostream& log);

struct SweepRow {
  std::string env;
  double lambda = 0.0;
  double rho = 0.0;
  CvMode cv_mode = CvMode::value;
  double mean_all = 0.0;
  double mean_last100 = 0.0;
  double stderr_last100 = 0.0;
  std::size_t seeds_ok = 0;
};

std::vector<SweepRow> cmd_sweep(const ExperimentConfig& cfg, std::ostream& log);

// --- case study --------------------------------------------------------------

struct CaseStudyRow {
  std::string method;  // none, value, value_refit, scalar, layer, coord
  double variance = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  double mse = 0.0;
  double mse_ci_lo = 0.0;
  double mse_ci_hi = 0.0;
  std::size_t n_eval = 0;
};

struct MsePoint {
  std::string method;
  std::size_t sample_size = 0;
  std::size_t estimates = 0;
  double mse = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
};

struct HistogramBin {
  std::string kind;  // per_sample or per_coordinate
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
};

struct CaseStudyReport {
  std::vector<CaseStudyRow> rows;
  std::vector<MsePoint> mse_curve;
  std::vector<HistogramBin> histograms;
  std::size_t fit_samples = 0;
  std::size_t eval_samples = 0;
  std::size_t reference_samples = 0;
  std::string checkpoint;

  const CaseStudyRow& row(const std::string& method) const;
};

CaseStudyReport cmd_case_study(const ExperimentConfig& cfg, std::ostream& log);

// Variance / MSE measurement on a frozen state; exposed for tests.
CaseStudyReport run_case_study(const TrainState& frozen, const ExperimentConfig& cfg, std::ostream& log);

// --- gradient checks ---------------------------------------------------------

struct GradcheckSuite {
  std::string name;
  std::size_t cases = 0;
  std::size_t coordinates = 0;
  double worst_relative_error = 0.0;
  bool passed = false;
};

struct GradcheckOptions {
  double tolerance = 1e-5;
  std::uint64_t seed = 0;
  // Negative control: perturbs every analytic gradient before comparison.
  bool corrupt = false;
};

std::vector<GradcheckSuite> cmd_gradcheck(const GradcheckOptions& opts, std::ostream& log);

// |a - b| / max(|a|, |b|, 1e-4)
double relative_error(double analytic, double numeric);

// --- plots -------------------------------------------------------------------

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

// Resamples onto `points` evenly spaced x values, then applies a centered moving average.
Series resample_smooth(const Series& s, std::size_t points = 512, std::size_t window = 15);

void write_svg(const std::filesystem::path& path, const std::string& title, const std::vector<Series>& series);

}  // namespace ccv::harness
