#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "ccv/harness.hpp"
#include "ccv/kernels.hpp"

namespace {

using namespace ccv;
using namespace ccv::harness;

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> num_seeds;
  std::optional<std::string> out;
  std::optional<std::size_t> workers;
  std::optional<std::string> env;
  std::optional<std::string> cv;
  std::optional<double> lambda;
  std::optional<double> rho;
  std::optional<std::size_t> steps;
  std::optional<std::string> checkpoint;
  std::optional<std::size_t> checkpoint_updates;
  bool independent_sample = false;
};

ExperimentConfig resolve(const Overrides& o) {
  ExperimentConfig cfg = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.num_seeds) cfg.num_seeds = *o.num_seeds;
  if (o.out) cfg.out = *o.out;
  if (o.workers) cfg.workers = *o.workers;
  if (o.env) {
    cfg.envs = {*o.env};
    cfg.case_study.env = *o.env;
  }
  if (o.cv) cfg.cv_modes = {parse_cv_mode(*o.cv)};
  if (o.lambda) {
    cfg.ppo.fit.lambda = *o.lambda;
    cfg.case_study.lambda = *o.lambda;
    cfg.sweep_lambdas = {*o.lambda};
  }
  if (o.rho) {
    cfg.ppo.fit.rho = *o.rho;
    cfg.case_study.rho = *o.rho;
    cfg.sweep_rhos = {*o.rho};
  }
  if (o.steps) cfg.ppo.total_steps = *o.steps;
  if (o.checkpoint) cfg.case_study.checkpoint = *o.checkpoint;
  if (o.checkpoint_updates) cfg.case_study.checkpoint_updates = *o.checkpoint_updates;
  if (o.independent_sample) cfg.ppo.independent_sample = true;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Coordinate-wise control variates for policy gradients"};
  app.require_subcommand(1);
  Overrides o;
  app.add_option("--config", o.config, "INI configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "Base seed");
  app.add_option("--seeds", o.num_seeds, "Number of consecutive seeds starting at --seed");
  app.add_option("--out", o.out, "Output directory");
  app.add_option("--workers", o.workers, "Parallel training cells");
  app.add_option("--env", o.env, "Environment (point_mass, chain_mdp, pendulum)");
  app.add_option("--cv", o.cv, "Control variate")->check(CLI::IsMember({"value", "scalar", "layer", "coord"}));
  app.add_option("--lambda", o.lambda, "Baseline loss mixing weight");
  app.add_option("--rho", o.rho, "Baseline proximal strength");
  app.add_option("--steps", o.steps, "Environment steps per training run");
  app.add_flag("--independent-sample", o.independent_sample, "Fit baselines on a fresh rollout");

  CLI::App* case_study = app.add_subcommand("case-study", "Gradient variance of every estimator on a frozen policy");
  case_study->add_option("--checkpoint", o.checkpoint, "Frozen policy checkpoint (trained in place when omitted)");
  case_study->add_option("--checkpoint-updates", o.checkpoint_updates, "Updates for the in-place checkpoint");
  CLI::App* train = app.add_subcommand("train", "Train every (env, cv, seed) cell and summarize");
  CLI::App* sweep = app.add_subcommand("sweep", "Train over the (lambda, rho) grid");
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "Finite-difference checks of all analytic gradients");
  GradcheckOptions gc;
  gradcheck->add_option("--tolerance", gc.tolerance, "Maximum relative error");
  gradcheck->add_flag("--corrupt", gc.corrupt, "Perturb analytic gradients (negative control)");

  CLI11_PARSE(app, argc, argv);

  try {
    std::clog << "kernels: " << kernels::isa_name(kernels::active().isa) << '\n';
    if (gradcheck->parsed()) {
      if (o.seed) gc.seed = *o.seed;
      bool ok = true;
      for (const GradcheckSuite& s : cmd_gradcheck(gc, std::cout)) ok = ok && s.passed;
      return ok ? 0 : 1;
    }
    const ExperimentConfig cfg = resolve(o);
    if (case_study->parsed()) {
      cmd_case_study(cfg, std::cout);
      std::cout << "wrote " << (cfg.out / "case_study.csv").string() << '\n';
      return 0;
    }
    if (train->parsed()) {
      const TrainSummary s = cmd_train(cfg, std::cout);
      for (const CellResult& c : s.cells) {
        if (!c.ok) return 1;
      }
      return 0;
    }
    if (sweep->parsed()) {
      cmd_sweep(cfg, std::cout);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
