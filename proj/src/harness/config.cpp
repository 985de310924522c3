#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

#include "ccv/harness.hpp"
#include "ccv/serialize.hpp"

namespace ccv::harness {
namespace {

namespace pt = boost::property_tree;

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + items[i];
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    return io::parse_double(v);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: '" + key + "' expects a number, got '" + v + "'");
  }
}

std::size_t to_count(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long x = 0;
  try {
    x = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size() || v.empty() || v.front() == '-') {
    throw std::invalid_argument("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
  return static_cast<std::size_t>(x);
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw std::invalid_argument("config: '" + key + "' expects true/false, got '" + v + "'");
}

template <class T, class F>
std::vector<T> to_list(const std::string& key, const std::string& v, F&& conv) {
  std::vector<T> out;
  for (const std::string& item : split_list(v)) out.push_back(conv(key, item));
  return out;
}

std::string fmt(double v) { return io::decimal(v); }
std::string fmt(std::size_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

template <class T>
std::string fmt_list(const std::vector<T>& xs) {
  std::vector<std::string> s;
  for (const T& x : xs) s.push_back(fmt(x));
  return join(s);
}

std::string fmt_modes(const std::vector<CvMode>& modes) {
  std::vector<std::string> s;
  for (CvMode m : modes) s.emplace_back(cv_mode_name(m));
  return join(s);
}

// One setter per key, keyed "section.name".
using Setter = std::function<void(ExperimentConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    auto num = [&](const std::string& k, auto member) {
      t[k] = [member](ExperimentConfig& c, const std::string& key, const std::string& v) {
        member(c) = to_double(key, v);
      };
    };
    auto count = [&](const std::string& k, auto member) {
      t[k] = [member](ExperimentConfig& c, const std::string& key, const std::string& v) {
        member(c) = to_count(key, v);
      };
    };
    auto flag = [&](const std::string& k, auto member) {
      t[k] = [member](ExperimentConfig& c, const std::string& key, const std::string& v) {
        member(c) = to_bool(key, v);
      };
    };

    t["experiment.envs"] = [](ExperimentConfig& c, const std::string&, const std::string& v) {
      c.envs = split_list(v);
    };
    t["experiment.cv_modes"] = [](ExperimentConfig& c, const std::string&, const std::string& v) {
      c.cv_modes.clear();
      for (const std::string& m : split_list(v)) c.cv_modes.push_back(parse_cv_mode(m));
    };
    t["experiment.seed"] = [](ExperimentConfig& c, const std::string& key, const std::string& v) {
      c.seed = to_count(key, v);
    };
    count("experiment.num_seeds", [](ExperimentConfig& c) -> std::size_t& { return c.num_seeds; });
    t["experiment.out"] = [](ExperimentConfig& c, const std::string&, const std::string& v) { c.out = v; };
    count("experiment.workers", [](ExperimentConfig& c) -> std::size_t& { return c.workers; });
    count("experiment.checkpoint_every", [](ExperimentConfig& c) -> std::size_t& { return c.checkpoint_every; });
    flag("experiment.write_plots", [](ExperimentConfig& c) -> bool& { return c.write_plots; });

    num("ppo.clip_eps", [](ExperimentConfig& c) -> double& { return c.ppo.clip_eps; });
    num("ppo.gamma", [](ExperimentConfig& c) -> double& { return c.ppo.gamma; });
    num("ppo.lambda_gae", [](ExperimentConfig& c) -> double& { return c.ppo.lambda_gae; });
    count("ppo.epochs", [](ExperimentConfig& c) -> std::size_t& { return c.ppo.epochs; });
    count("ppo.minibatches", [](ExperimentConfig& c) -> std::size_t& { return c.ppo.minibatches; });
    num("ppo.lr", [](ExperimentConfig& c) -> double& { return c.ppo.lr; });
    flag("ppo.anneal_lr", [](ExperimentConfig& c) -> bool& { return c.ppo.anneal_lr; });
    num("ppo.entropy_coef", [](ExperimentConfig& c) -> double& { return c.ppo.entropy_coef; });
    num("ppo.value_coef", [](ExperimentConfig& c) -> double& { return c.ppo.value_coef; });
    num("ppo.max_grad_norm", [](ExperimentConfig& c) -> double& { return c.ppo.max_grad_norm; });
    count("ppo.steps_per_update", [](ExperimentConfig& c) -> std::size_t& { return c.ppo.steps_per_update; });
    count("ppo.total_steps", [](ExperimentConfig& c) -> std::size_t& { return c.ppo.total_steps; });
    t["ppo.hidden"] = [](ExperimentConfig& c, const std::string& key, const std::string& v) {
      c.ppo.hidden = to_list<std::size_t>(key, v, to_count);
    };
    num("ppo.initial_log_std", [](ExperimentConfig& c) -> double& { return c.ppo.initial_log_std; });
    flag("ppo.scale_rewards", [](ExperimentConfig& c) -> bool& { return c.ppo.scale_rewards; });
    flag("ppo.normalize_advantages", [](ExperimentConfig& c) -> bool& { return c.ppo.normalize_advantages; });
    flag("ppo.per_column_advantage_norm",
         [](ExperimentConfig& c) -> bool& { return c.ppo.per_column_advantage_norm; });
    count("ppo.eval_episodes", [](ExperimentConfig& c) -> std::size_t& { return c.ppo.eval_episodes; });

    num("fit.lambda", [](ExperimentConfig& c) -> double& { return c.ppo.fit.lambda; });
    num("fit.rho", [](ExperimentConfig& c) -> double& { return c.ppo.fit.rho; });
    count("fit.epochs", [](ExperimentConfig& c) -> std::size_t& { return c.ppo.fit.epochs; });
    count("fit.minibatches", [](ExperimentConfig& c) -> std::size_t& { return c.ppo.fit.minibatches; });
    num("fit.lr", [](ExperimentConfig& c) -> double& { return c.ppo.fit.lr; });
    num("fit.max_grad_norm", [](ExperimentConfig& c) -> double& { return c.ppo.fit.max_grad_norm; });
    flag("fit.full_batch_normalization",
         [](ExperimentConfig& c) -> bool& { return c.ppo.fit.full_batch_normalization; });
    num("fit.guard_ratio", [](ExperimentConfig& c) -> double& { return c.ppo.fit.guard_ratio; });
    flag("fit.independent_sample", [](ExperimentConfig& c) -> bool& { return c.ppo.independent_sample; });

    count("env.chain_states", [](ExperimentConfig& c) -> std::size_t& { return c.ppo.env.chain_states; });
    count("env.chain_actions", [](ExperimentConfig& c) -> std::size_t& { return c.ppo.env.chain_actions; });
    count("env.chain_horizon", [](ExperimentConfig& c) -> std::size_t& { return c.ppo.env.chain_horizon; });

    t["case_study.env"] = [](ExperimentConfig& c, const std::string&, const std::string& v) {
      c.case_study.env = v;
    };
    t["case_study.checkpoint"] = [](ExperimentConfig& c, const std::string&, const std::string& v) {
      c.case_study.checkpoint = v;
    };
    count("case_study.checkpoint_updates",
          [](ExperimentConfig& c) -> std::size_t& { return c.case_study.checkpoint_updates; });
    count("case_study.fit_steps", [](ExperimentConfig& c) -> std::size_t& { return c.case_study.fit_steps; });
    count("case_study.eval_steps", [](ExperimentConfig& c) -> std::size_t& { return c.case_study.eval_steps; });
    count("case_study.reference_factor",
          [](ExperimentConfig& c) -> std::size_t& { return c.case_study.reference_factor; });
    num("case_study.lambda", [](ExperimentConfig& c) -> double& { return c.case_study.lambda; });
    num("case_study.rho", [](ExperimentConfig& c) -> double& { return c.case_study.rho; });
    count("case_study.fit_epochs", [](ExperimentConfig& c) -> std::size_t& { return c.case_study.fit_epochs; });
    count("case_study.fit_minibatches",
          [](ExperimentConfig& c) -> std::size_t& { return c.case_study.fit_minibatches; });
    num("case_study.fit_lr", [](ExperimentConfig& c) -> double& { return c.case_study.fit_lr; });
    t["case_study.mse_sizes"] = [](ExperimentConfig& c, const std::string& key, const std::string& v) {
      c.case_study.mse_sizes = to_list<std::size_t>(key, v, to_count);
    };
    count("case_study.histogram_bins",
          [](ExperimentConfig& c) -> std::size_t& { return c.case_study.histogram_bins; });

    t["sweep.lambdas"] = [](ExperimentConfig& c, const std::string& key, const std::string& v) {
      c.sweep_lambdas = to_list<double>(key, v, to_double);
    };
    t["sweep.rhos"] = [](ExperimentConfig& c, const std::string& key, const std::string& v) {
      c.sweep_rhos = to_list<double>(key, v, to_double);
    };
    return t;
  }();
  return table;
}

}  // namespace

std::vector<std::uint64_t> ExperimentConfig::seeds() const {
  std::vector<std::uint64_t> out;
  for (std::size_t i = 0; i < num_seeds; ++i) out.push_back(seed + i);
  return out;
}

void ExperimentConfig::validate() const {
  if (num_seeds == 0) throw std::invalid_argument("config: num_seeds must be >= 1");
  if (envs.empty()) throw std::invalid_argument("config: at least one env is required");
  if (cv_modes.empty()) throw std::invalid_argument("config: at least one cv_mode is required");
  const auto valid = env_names();
  for (const std::string& e : envs) {
    if (std::find(valid.begin(), valid.end(), e) == valid.end()) {
      std::string names;
      for (const auto& v : valid) names += " " + v;
      throw std::invalid_argument("config: unknown env '" + e + "'; valid:" + names);
    }
  }
  for (CvMode m : cv_modes) {
    if (m == CvMode::none) throw std::invalid_argument("config: cv_mode none cannot be trained");
  }
  if (workers == 0) throw std::invalid_argument("config: workers must be >= 1");
  if (sweep_lambdas.empty() || sweep_rhos.empty()) throw std::invalid_argument("config: sweep grid is empty");
  if (case_study.mse_sizes.empty()) throw std::invalid_argument("config: case_study.mse_sizes is empty");
  if (case_study.eval_steps < 2 || case_study.fit_steps < 1) {
    throw std::invalid_argument("config: case_study needs eval_steps >= 2 and fit_steps >= 1");
  }
  PPOConfig p = ppo;
  for (CvMode m : cv_modes) {
    p.cv_mode = m;
    p.validate();
  }
}

ExperimentConfig parse_config(std::istream& is, ExperimentConfig base) {
  pt::ptree tree;
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  const auto& table = setters();
  for (const auto& [section, body] : tree) {
    if (body.empty()) {
      throw std::invalid_argument("config: key '" + section + "' must live inside a [section]");
    }
    for (const auto& [name, value] : body) {
      const std::string key = section + "." + name;
      const auto it = table.find(key);
      if (it == table.end()) throw std::invalid_argument("config: unknown key '" + key + "'");
      it->second(base, key, value.get_value<std::string>());
    }
  }
  return base;
}

ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("config: cannot open '" + path.string() + "'");
  return parse_config(is, std::move(base));
}

void write_config(std::ostream& os, const ExperimentConfig& c) {
  const PPOConfig& p = c.ppo;
  const CaseStudyConfig& cs = c.case_study;
  os << "[experiment]\n"
     << "envs = " << join(c.envs) << '\n'
     << "cv_modes = " << fmt_modes(c.cv_modes) << '\n'
     << "seed = " << c.seed << '\n'
     << "num_seeds = " << c.num_seeds << '\n'
     << "out = " << c.out.string() << '\n'
     << "workers = " << c.workers << '\n'
     << "checkpoint_every = " << c.checkpoint_every << '\n'
     << "write_plots = " << fmt(c.write_plots) << "\n\n";
  os << "[ppo]\n"
     << "clip_eps = " << fmt(p.clip_eps) << '\n'
     << "gamma = " << fmt(p.gamma) << '\n'
     << "lambda_gae = " << fmt(p.lambda_gae) << '\n'
     << "epochs = " << p.epochs << '\n'
     << "minibatches = " << p.minibatches << '\n'
     << "lr = " << fmt(p.lr) << '\n'
     << "anneal_lr = " << fmt(p.anneal_lr) << '\n'
     << "entropy_coef = " << fmt(p.entropy_coef) << '\n'
     << "value_coef = " << fmt(p.value_coef) << '\n'
     << "max_grad_norm = " << fmt(p.max_grad_norm) << '\n'
     << "steps_per_update = " << p.steps_per_update << '\n'
     << "total_steps = " << p.total_steps << '\n'
     << "hidden = " << fmt_list(p.hidden) << '\n'
     << "initial_log_std = " << fmt(p.initial_log_std) << '\n'
     << "scale_rewards = " << fmt(p.scale_rewards) << '\n'
     << "normalize_advantages = " << fmt(p.normalize_advantages) << '\n'
     << "per_column_advantage_norm = " << fmt(p.per_column_advantage_norm) << '\n'
     << "eval_episodes = " << p.eval_episodes << "\n\n";
  os << "[fit]\n"
     << "lambda = " << fmt(p.fit.lambda) << '\n'
     << "rho = " << fmt(p.fit.rho) << '\n'
     << "epochs = " << p.fit.epochs << '\n'
     << "minibatches = " << p.fit.minibatches << '\n'
     << "lr = " << fmt(p.fit.lr) << '\n'
     << "max_grad_norm = " << fmt(p.fit.max_grad_norm) << '\n'
     << "full_batch_normalization = " << fmt(p.fit.full_batch_normalization) << '\n'
     << "guard_ratio = " << fmt(p.fit.guard_ratio) << '\n'
     << "independent_sample = " << fmt(p.independent_sample) << "\n\n";
  os << "[env]\n"
     << "chain_states = " << p.env.chain_states << '\n'
     << "chain_actions = " << p.env.chain_actions << '\n'
     << "chain_horizon = " << p.env.chain_horizon << "\n\n";
  os << "[case_study]\n"
     << "env = " << cs.env << '\n'
     << "checkpoint = " << cs.checkpoint << '\n'
     << "checkpoint_updates = " << cs.checkpoint_updates << '\n'
     << "fit_steps = " << cs.fit_steps << '\n'
     << "eval_steps = " << cs.eval_steps << '\n'
     << "reference_factor = " << cs.reference_factor << '\n'
     << "lambda = " << fmt(cs.lambda) << '\n'
     << "rho = " << fmt(cs.rho) << '\n'
     << "fit_epochs = " << cs.fit_epochs << '\n'
     << "fit_minibatches = " << cs.fit_minibatches << '\n'
     << "fit_lr = " << fmt(cs.fit_lr) << '\n'
     << "mse_sizes = " << fmt_list(cs.mse_sizes) << '\n'
     << "histogram_bins = " << cs.histogram_bins << "\n\n";
  os << "[sweep]\n"
     << "lambdas = " << fmt_list(c.sweep_lambdas) << '\n'
     << "rhos = " << fmt_list(c.sweep_rhos) << '\n';
}

}  // namespace ccv::harness
