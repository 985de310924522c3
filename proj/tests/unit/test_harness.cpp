#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ccv/harness.hpp"

using namespace ccv;
using namespace ccv::harness;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ccv_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

ExperimentConfig tiny(const fs::path& out) {
  ExperimentConfig cfg;
  cfg.out = out;
  cfg.num_seeds = 2;
  cfg.write_plots = false;
  cfg.ppo.hidden = {8};
  cfg.ppo.steps_per_update = 128;
  cfg.ppo.total_steps = 512;
  cfg.ppo.minibatches = 4;
  cfg.ppo.epochs = 2;
  cfg.ppo.eval_episodes = 2;
  cfg.ppo.fit.minibatches = 4;
  cfg.ppo.fit.epochs = 2;
  cfg.case_study.checkpoint_updates = 2;
  cfg.case_study.fit_steps = 300;
  cfg.case_study.eval_steps = 400;
  cfg.case_study.reference_factor = 2;
  cfg.case_study.fit_epochs = 2;
  cfg.case_study.fit_minibatches = 4;
  cfg.case_study.mse_sizes = {20, 50};
  cfg.case_study.histogram_bins = 8;
  return cfg;
}

}  // namespace

TEST_CASE("config text round trips and rejects unknown keys") {
  ExperimentConfig cfg;
  cfg.envs = {"chain_mdp"};
  cfg.cv_modes = {CvMode::coord, CvMode::layer};
  cfg.ppo.fit.lambda = 0.3;
  cfg.ppo.hidden = {32, 16};
  cfg.case_study.mse_sizes = {10, 40};
  cfg.sweep_rhos = {0.0, 0.25};
  std::stringstream ss;
  write_config(ss, cfg);
  const std::string text = ss.str();
  std::istringstream in(text);
  const ExperimentConfig back = parse_config(in);
  std::stringstream again;
  write_config(again, back);
  CHECK(again.str() == text);
  CHECK(back.cv_modes == cfg.cv_modes);
  CHECK(back.ppo.hidden == cfg.ppo.hidden);
  CHECK(back.ppo.fit.lambda == 0.3);

  std::istringstream unknown("[ppo]\nclip_epsilon = 0.1\n");
  CHECK_THROWS_WITH_AS(parse_config(unknown), doctest::Contains("unknown key 'ppo.clip_epsilon'"),
                       std::invalid_argument);
  std::istringstream bad_number("[fit]\nlambda = abc\n");
  CHECK_THROWS_AS(parse_config(bad_number), std::invalid_argument);
  std::istringstream bad_env("[experiment]\nenvs = point_mass, cartpole\n");
  CHECK_THROWS_WITH_AS(parse_config(bad_env).validate(), doctest::Contains("cartpole"), std::invalid_argument);
  CHECK_THROWS(load_config("/nonexistent/config.ini"));
}

TEST_CASE("csv writer quotes, round trips and refuses non-finite numbers") {
  const fs::path dir = scratch("csv");
  {
    CsvWriter w(dir / "a.csv", {"name", "x", "n"});
    w << "plain" << 0.1 << std::uint64_t{3};
    w.end_row();
    w << "has,comma \"q\"" << -2.5e-300 << std::uint64_t{0};
    w.end_row();
    w.close();
  }
  const CsvTable t = read_csv(dir / "a.csv");
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows[1][0] == "has,comma \"q\"");
  CHECK(std::stod(t.rows[0][1]) == 0.1);
  CHECK(std::stod(t.rows[1][1]) == -2.5e-300);
  CHECK(t.column("n") == 2);
  CHECK_THROWS_AS(t.column("missing"), std::out_of_range);

  CsvWriter w(dir / "b.csv", {"x"});
  CHECK_THROWS_AS(w << std::nan(""), NumericError);
  CsvWriter short_row(dir / "c.csv", {"x", "y"});
  short_row << 1.0;
  CHECK_THROWS_AS(short_row.end_row(), std::logic_error);
  fs::remove_all(dir);
}

TEST_CASE("mean and standard error") {
  const MeanSe m = mean_se({1.0, 2.0, 3.0, 6.0});
  CHECK(m.mean == doctest::Approx(3.0));
  CHECK(m.se == doctest::Approx(std::sqrt(14.0 / 3.0) / 2.0));
  CHECK(m.n == 4);
  CHECK(mean_se({5.0}).se == 0.0);
  std::vector<CurveRecord> curve;
  for (int i = 0; i < 150; ++i) curve.push_back({std::uint64_t(i), std::uint64_t(i + 1), double(i)});
  const auto [all, last] = curve_means(curve, 100);
  CHECK(all == doctest::Approx(74.5));
  CHECK(last == doctest::Approx(99.5));
}

TEST_CASE("resampling and smoothing") {
  Series s{"lin", {}, {}};
  for (int i = 0; i <= 10; ++i) {
    s.x.push_back(i);
    s.y.push_back(2.0 * i + 1.0);
  }
  const Series r = resample_smooth(s, 21, 1);
  REQUIRE(r.x.size() == 21);
  CHECK(r.x.front() == 0.0);
  CHECK(r.x.back() == 10.0);
  CHECK(r.y[5] == doctest::Approx(2.0 * 2.5 + 1.0));
  const Series sm = resample_smooth(s, 21, 5);
  CHECK(sm.y[10] == doctest::Approx(11.0));
}

TEST_CASE("summary improvements are relative to the value row") {
  std::vector<CellResult> cells;
  const auto cell = [](const std::string& env, CvMode m, std::uint64_t seed, double last) {
    CellResult c;
    c.key = {env, m, seed, {}};
    c.ok = true;
    c.mean_all = last / 2.0;
    c.mean_last100 = last;
    return c;
  };
  cells.push_back(cell("a", CvMode::value, 0, -10.0));
  cells.push_back(cell("a", CvMode::value, 1, -10.0));
  cells.push_back(cell("a", CvMode::coord, 0, -8.0));
  cells.push_back(cell("a", CvMode::coord, 1, -8.0));
  cells.push_back(cell("b", CvMode::value, 0, 4.0));
  cells.push_back(cell("b", CvMode::coord, 0, 5.0));
  CellResult failed = cell("b", CvMode::coord, 1, 0.0);
  failed.ok = false;
  cells.push_back(failed);
  const TrainSummary s = summarize(cells);
  for (const SummaryRow& r : s.rows) {
    if (r.cv_mode == CvMode::value) {
      CHECK(*r.improve_last100 == 0.0);
    } else if (r.env == "a") {
      CHECK(*r.improve_last100 == doctest::Approx(0.2));
    } else {
      CHECK(*r.improve_last100 == doctest::Approx(0.25));
      CHECK(r.seeds_failed == 1);
      CHECK(r.seeds_ok == 1);
    }
  }
  bool seen = false;
  for (const ImproveRow& r : s.improve) {
    if (r.cv_mode != CvMode::coord) continue;
    seen = true;
    CHECK(r.improve_last100 == doctest::Approx(0.225));
    CHECK(r.envs == 2);
  }
  CHECK(seen);
}

TEST_CASE("parallel_for runs every job and rethrows failures") {
  std::vector<int> slots(17, 0);
  parallel_for(slots.size(), 3, [&](std::size_t i) { slots[i] = static_cast<int>(i) + 1; });
  for (std::size_t i = 0; i < slots.size(); ++i) CHECK(slots[i] == static_cast<int>(i) + 1);
  CHECK_THROWS_AS(parallel_for(4, 2, [](std::size_t i) {
                    if (i == 2) throw std::runtime_error("boom");
                  }),
                  std::runtime_error);
}

TEST_CASE("train writes per-cell outputs and is reproducible") {
  const fs::path a = scratch("train_a");
  const fs::path b = scratch("train_b");
  ExperimentConfig cfg = tiny(a);
  cfg.envs = {"chain_mdp"};
  cfg.cv_modes = {CvMode::value, CvMode::coord};
  std::ostringstream log;
  const TrainSummary s = cmd_train(cfg, log);
  CHECK(s.rows.size() == 2);
  for (const CellResult& c : s.cells) CHECK(c.ok);
  const fs::path curve = cell_dir(a, {"chain_mdp", CvMode::coord, 1, {}}) / "curve.csv";
  REQUIRE(fs::exists(curve));
  const CsvTable t = read_csv(curve);
  CHECK(t.header == std::vector<std::string>{"step", "episode", "return", "cv_mode", "seed"});
  CHECK(t.rows.front()[3] == "coord");
  CHECK(t.rows.front()[4] == "1");
  CHECK(fs::exists(cell_dir(a, {"chain_mdp", CvMode::coord, 1, {}}) / "checkpoint_512"));

  cfg.out = b;
  cfg.workers = 2;
  cmd_train(cfg, log);
  CHECK(slurp(a / "summary.csv") == slurp(b / "summary.csv"));
  CHECK(slurp(curve) == slurp(cell_dir(b, {"chain_mdp", CvMode::coord, 1, {}}) / "curve.csv"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("sweep covers the full grid") {
  const fs::path out = scratch("sweep");
  ExperimentConfig cfg = tiny(out);
  cfg.envs = {"chain_mdp"};
  cfg.num_seeds = 1;
  cfg.ppo.total_steps = 256;
  cfg.cv_modes = {CvMode::value, CvMode::scalar, CvMode::coord};
  cfg.sweep_lambdas = {0.0, 1.0};
  cfg.sweep_rhos = {0.0, 0.1, 1.0};
  std::ostringstream log;
  const auto rows = cmd_sweep(cfg, log);
  CHECK(rows.size() == 2 * 3 * 3);
  const CsvTable t = read_csv(out / "sweep.csv");
  CHECK(t.header == std::vector<std::string>{"env", "lambda", "rho", "cv_mode", "mean_return_all",
                                             "mean_return_last100", "stderr"});
  CHECK(t.rows.size() == 18);
  CHECK(fs::exists(cell_dir(out, {"chain_mdp", CvMode::coord, 0, std::pair{1.0, 0.1}}) / "curve.csv"));
  fs::remove_all(out);
}

TEST_CASE("case study on a tiny budget") {
  const fs::path out = scratch("case");
  ExperimentConfig cfg = tiny(out);
  cfg.num_seeds = 1;
  std::ostringstream log;
  const CaseStudyReport r = cmd_case_study(cfg, log);
  CHECK(r.rows.size() == 6);
  CHECK(r.eval_samples == 400);
  for (const CaseStudyRow& row : r.rows) {
    CHECK(row.variance > 0.0);
    CHECK(row.ci_lo <= row.variance);
    CHECK(row.variance <= row.ci_hi);
    CHECK(row.n_eval == 400);
  }
  CHECK_THROWS(r.row("bogus"));
  const CsvTable t = read_csv(out / "case_study.csv");
  CHECK(t.header == std::vector<std::string>{"cv_mode", "variance", "ci_lo", "ci_hi", "mse", "n_eval"});
  CHECK(t.rows.size() == 6);
  CHECK(read_csv(out / "case_study_mse.csv").rows.size() == 12);

  // A second run reuses the saved checkpoint and reproduces the table.
  const std::string first = slurp(out / "case_study.csv");
  cmd_case_study(cfg, log);
  CHECK(slurp(out / "case_study.csv") == first);
  fs::remove_all(out);

  ExperimentConfig missing = tiny(scratch("case_missing"));
  missing.case_study.checkpoint = "/nonexistent/checkpoint";
  CHECK_THROWS_WITH(cmd_case_study(missing, log), doctest::Contains("not found"));
}

TEST_CASE("gradient checks pass and the corrupted control fails") {
  std::ostringstream log;
  const auto ok = cmd_gradcheck({}, log);
  REQUIRE(ok.size() == 3);
  for (const GradcheckSuite& s : ok) {
    CHECK(s.passed);
    CHECK(s.worst_relative_error < 1e-6);
  }
  GradcheckOptions bad;
  bad.corrupt = true;
  for (const GradcheckSuite& s : cmd_gradcheck(bad, log)) CHECK_FALSE(s.passed);
  CHECK(relative_error(0.0, 0.0) == 0.0);
  CHECK(relative_error(1e-6, 0.0) == doctest::Approx(1e-2));
}
