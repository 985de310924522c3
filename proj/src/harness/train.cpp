#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "ccv/harness.hpp"
#include "ccv/serialize.hpp"

namespace ccv::harness {
namespace {

std::string mode_str(CvMode m) { return std::string(cv_mode_name(m)); }

std::filesystem::path sweep_root(const std::filesystem::path& out, double lambda, double rho) {
  return out / ("lambda_" + io::decimal(lambda) + "_rho_" + io::decimal(rho));
}

void write_cell_files(const std::filesystem::path& dir, const CellResult& r) {
  CsvWriter curve(dir / "curve.csv", {"step", "episode", "return", "cv_mode", "seed"});
  for (const CurveRecord& c : r.curve) {
    curve << c.step << c.episode << c.episode_return << mode_str(r.key.cv_mode) << r.key.seed;
    curve.end_row();
  }
  curve.close();
  CsvWriter diag(dir / "diagnostics.csv",
                 {"update", "step", "lr", "clip_fraction", "baseline_loss_before", "baseline_loss_after",
                  "baseline_reverted", "value_loss", "grad_trace_variance", "mean_abs_log_std"});
  for (const UpdateDiagnostics& d : r.diagnostics) {
    diag << d.update << d.step << d.lr << d.clip_fraction << d.baseline_loss_before << d.baseline_loss_after
         << std::uint64_t{d.baseline_reverted ? 1u : 0u} << d.value_loss << d.grad_trace_variance
         << d.mean_abs_log_std;
    diag.end_row();
  }
  diag.close();
}

void write_snapshot(const ExperimentConfig& cfg) {
  std::filesystem::create_directories(cfg.out);
  std::ofstream f(cfg.out / "config.ini", std::ios::binary | std::ios::trunc);
  write_config(f, cfg);
  if (!f) throw std::runtime_error("cannot write '" + (cfg.out / "config.ini").string() + "'");
}

// Seed-averaged smoothed learning curve of one (env, cv_mode).
Series mean_curve(const std::vector<const CellResult*>& cells, const std::string& label) {
  Series avg{label, {}, {}};
  std::size_t used = 0;
  for (const CellResult* c : cells) {
    if (!c->ok || c->curve.size() < 2) continue;
    Series s{label, {}, {}};
    for (const CurveRecord& r : c->curve) {
      s.x.push_back(static_cast<double>(r.step));
      s.y.push_back(r.episode_return);
    }
    const Series sm = resample_smooth(s);
    if (avg.x.empty()) {
      avg = sm;
    } else {
      for (std::size_t i = 0; i < avg.y.size(); ++i) avg.y[i] += sm.y[i];
    }
    ++used;
  }
  for (double& y : avg.y) y /= static_cast<double>(std::max<std::size_t>(used, 1));
  return avg;
}

std::vector<CellResult> run_cells(const ExperimentConfig& cfg, const std::vector<CellKey>& keys,
                                  std::ostream& log) {
  std::vector<CellResult> results(keys.size());
  std::mutex log_mutex;
  parallel_for(keys.size(), cfg.workers, [&](std::size_t i) {
    results[i] = run_cell(cfg, keys[i]);
    const CellResult& r = results[i];
    std::lock_guard<std::mutex> lock(log_mutex);
    log << "  " << r.key.env << ' ' << cv_mode_name(r.key.cv_mode);
    if (r.key.lambda_rho) log << " lambda=" << r.key.lambda_rho->first << " rho=" << r.key.lambda_rho->second;
    log << " seed=" << r.key.seed;
    if (r.ok) {
      log << "  initial " << std::fixed << std::setprecision(2) << r.initial_return << "  last100 "
          << r.mean_last100 << "  (" << std::setprecision(1) << r.seconds << " s)" << std::defaultfloat << '\n';
    } else {
      log << "  FAILED: " << r.error << '\n';
    }
  });
  return results;
}

}  // namespace

std::filesystem::path cell_dir(const std::filesystem::path& out, const CellKey& key) {
  const std::filesystem::path root =
      key.lambda_rho ? sweep_root(out, key.lambda_rho->first, key.lambda_rho->second) : out;
  return root / key.env / mode_str(key.cv_mode) / ("seed" + std::to_string(key.seed));
}

CellResult run_cell(const ExperimentConfig& cfg, const CellKey& key) {
  CellResult r;
  r.key = key;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    PPOConfig p = cfg.ppo;
    p.cv_mode = key.cv_mode;
    if (key.lambda_rho) {
      p.fit.lambda = key.lambda_rho->first;
      p.fit.rho = key.lambda_rho->second;
    }
    const std::filesystem::path dir = cell_dir(cfg.out, key);
    std::filesystem::create_directories(dir);
    const std::size_t updates = p.num_updates();
    const auto checkpoint = [&](const TrainState& st) {
      save_checkpoint(st, (dir / ("checkpoint_" + std::to_string(st.step))).string());
    };
    UpdateCallback cb;
    if (cfg.checkpoint_every > 0) {
      cb = [&](const TrainState& st, const UpdateDiagnostics&) {
        if (st.update % cfg.checkpoint_every == 0 && st.update < updates) checkpoint(st);
      };
    }
    TrainResult tr = train(key.env, p, key.seed, cb);
    checkpoint(tr.state);
    r.curve = std::move(tr.curve);
    r.diagnostics = std::move(tr.diagnostics);
    r.initial_return = tr.initial_return;
    if (r.curve.empty()) throw std::runtime_error("no episode finished within the step budget");
    std::tie(r.mean_all, r.mean_last100) = curve_means(r.curve);
    r.ok = true;
  } catch (const std::exception& e) {
    r.ok = false;
    r.error = e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

void parallel_for(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& job) {
  workers = std::max<std::size_t>(1, std::min(workers, count));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          job(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (std::thread& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

TrainSummary summarize(std::vector<CellResult> cells) {
  TrainSummary s;
  std::vector<std::pair<std::string, CvMode>> order;
  for (const CellResult& c : cells) {
    const std::pair<std::string, CvMode> k{c.key.env, c.key.cv_mode};
    if (std::find(order.begin(), order.end(), k) == order.end()) order.push_back(k);
  }
  for (const auto& [env, mode] : order) {
    SummaryRow row;
    row.env = env;
    row.cv_mode = mode;
    std::vector<double> init, all, last;
    for (const CellResult& c : cells) {
      if (c.key.env != env || c.key.cv_mode != mode) continue;
      if (!c.ok) {
        ++row.seeds_failed;
        continue;
      }
      ++row.seeds_ok;
      init.push_back(c.initial_return);
      all.push_back(c.mean_all);
      last.push_back(c.mean_last100);
    }
    row.initial = mean_se(init);
    row.all = mean_se(all);
    row.last100 = mean_se(last);
    s.rows.push_back(row);
  }
  for (SummaryRow& row : s.rows) {
    const auto value = std::find_if(s.rows.begin(), s.rows.end(), [&](const SummaryRow& r) {
      return r.env == row.env && r.cv_mode == CvMode::value && r.seeds_ok > 0;
    });
    if (value == s.rows.end() || row.seeds_ok == 0) continue;
    row.improve_all = (row.all.mean - value->all.mean) / std::abs(value->all.mean);
    row.improve_last100 = (row.last100.mean - value->last100.mean) / std::abs(value->last100.mean);
  }
  std::vector<CvMode> modes;
  for (const SummaryRow& row : s.rows) {
    if (std::find(modes.begin(), modes.end(), row.cv_mode) == modes.end()) modes.push_back(row.cv_mode);
  }
  for (CvMode m : modes) {
    ImproveRow imp;
    imp.cv_mode = m;
    for (const SummaryRow& row : s.rows) {
      if (row.cv_mode != m || !row.improve_all) continue;
      imp.improve_all += *row.improve_all;
      imp.improve_last100 += *row.improve_last100;
      ++imp.envs;
    }
    if (imp.envs == 0) continue;
    imp.improve_all /= static_cast<double>(imp.envs);
    imp.improve_last100 /= static_cast<double>(imp.envs);
    s.improve.push_back(imp);
  }
  s.cells = std::move(cells);
  return s;
}

TrainSummary cmd_train(const ExperimentConfig& cfg, std::ostream& log) {
  cfg.validate();
  write_snapshot(cfg);
  std::vector<CellKey> keys;
  for (const std::string& env : cfg.envs) {
    for (CvMode m : cfg.cv_modes) {
      for (std::uint64_t seed : cfg.seeds()) keys.push_back({env, m, seed, std::nullopt});
    }
  }
  log << "training " << keys.size() << " cells on " << cfg.workers << " worker(s)\n";
  const auto t0 = std::chrono::steady_clock::now();
  TrainSummary s = summarize(run_cells(cfg, keys, log));

  for (const CellResult& c : s.cells) {
    if (c.ok) write_cell_files(cell_dir(cfg.out, c.key), c);
  }
  const bool has_improve = !s.improve.empty();
  std::vector<std::string> header{"env", "cv_mode", "seeds_ok", "seeds_failed", "initial_return", "initial_se",
                                  "mean_return_all", "se_all", "mean_return_last100", "se_last100"};
  if (has_improve) {
    header.push_back("improve_all");
    header.push_back("improve_last100");
  }
  CsvWriter summary(cfg.out / "summary.csv", header);
  for (const SummaryRow& r : s.rows) {
    if (r.seeds_ok == 0) continue;
    summary << r.env << mode_str(r.cv_mode) << std::uint64_t{r.seeds_ok} << std::uint64_t{r.seeds_failed}
            << r.initial.mean << r.initial.se << r.all.mean << r.all.se << r.last100.mean << r.last100.se;
    if (has_improve) summary << r.improve_all.value_or(0.0) << r.improve_last100.value_or(0.0);
    summary.end_row();
  }
  summary.close();
  if (has_improve) {
    CsvWriter improve(cfg.out / "improve.csv", {"cv_mode", "improve_all", "improve_last100", "envs"});
    for (const ImproveRow& r : s.improve) {
      improve << mode_str(r.cv_mode) << r.improve_all << r.improve_last100 << std::uint64_t{r.envs};
      improve.end_row();
    }
    improve.close();
  }
  CsvWriter failed(cfg.out / "failed.csv", {"env", "cv_mode", "seed", "error"});
  for (const CellResult& c : s.cells) {
    if (c.ok) continue;
    failed << c.key.env << mode_str(c.key.cv_mode) << c.key.seed << c.error;
    failed.end_row();
  }
  failed.close();

  if (cfg.write_plots) {
    for (const std::string& env : cfg.envs) {
      std::vector<Series> series;
      for (CvMode m : cfg.cv_modes) {
        std::vector<const CellResult*> cells;
        for (const CellResult& c : s.cells) {
          if (c.key.env == env && c.key.cv_mode == m) cells.push_back(&c);
        }
        Series avg = mean_curve(cells, mode_str(m));
        if (!avg.x.empty()) series.push_back(std::move(avg));
      }
      if (!series.empty()) write_svg(cfg.out / env / "curves.svg", env + ": episode return", series);
    }
  }

  log << '\n' << std::left << std::setw(12) << "env" << std::setw(8) << "cv" << std::right << std::setw(6) << "ok"
      << std::setw(22) << "all episodes" << std::setw(22) << "last 100" << std::setw(10) << "Improve." << '\n';
  for (const SummaryRow& r : s.rows) {
    std::ostringstream all, last;
    all << std::fixed << std::setprecision(2) << r.all.mean << " +- " << r.all.se;
    last << std::fixed << std::setprecision(2) << r.last100.mean << " +- " << r.last100.se;
    log << std::left << std::setw(12) << r.env << std::setw(8) << cv_mode_name(r.cv_mode) << std::right
        << std::setw(6) << (std::to_string(r.seeds_ok) + "/" + std::to_string(r.seeds_ok + r.seeds_failed))
        << std::setw(22) << (r.seeds_ok ? all.str() : "failed") << std::setw(22) << (r.seeds_ok ? last.str() : "failed");
    if (r.improve_last100) {
      log << std::setw(9) << std::showpos << std::fixed << std::setprecision(1) << 100.0 * *r.improve_last100
          << '%' << std::noshowpos << std::defaultfloat;
    }
    log << '\n';
  }
  if (has_improve) {
    log << "\nmean improvement over value CV across envs (all / last 100):\n";
    for (const ImproveRow& r : s.improve) {
      log << "  " << std::left << std::setw(8) << cv_mode_name(r.cv_mode) << std::right << std::showpos << std::fixed
          << std::setprecision(1) << 100.0 * r.improve_all << "% / " << 100.0 * r.improve_last100 << '%'
          << std::noshowpos << std::defaultfloat << '\n';
    }
  }
  log << "wall-clock " << std::fixed << std::setprecision(1)
      << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << " s" << std::defaultfloat
      << '\n';
  return s;
}

std::vector<SweepRow> cmd_sweep(const ExperimentConfig& cfg, std::ostream& log) {
  cfg.validate();
  write_snapshot(cfg);
  std::vector<CellKey> keys;
  for (const std::string& env : cfg.envs) {
    for (CvMode m : cfg.cv_modes) {
      if (m == CvMode::value) {
        for (std::uint64_t seed : cfg.seeds()) keys.push_back({env, m, seed, std::nullopt});
        continue;
      }
      for (double lambda : cfg.sweep_lambdas) {
        for (double rho : cfg.sweep_rhos) {
          for (std::uint64_t seed : cfg.seeds()) keys.push_back({env, m, seed, std::make_pair(lambda, rho)});
        }
      }
    }
  }
  log << "sweep: " << keys.size() << " cells on " << cfg.workers << " worker(s)\n";
  const std::vector<CellResult> cells = run_cells(cfg, keys, log);
  for (const CellResult& c : cells) {
    if (c.ok) write_cell_files(cell_dir(cfg.out, c.key), c);
  }

  std::vector<SweepRow> rows;
  for (const std::string& env : cfg.envs) {
    for (CvMode m : cfg.cv_modes) {
      for (double lambda : cfg.sweep_lambdas) {
        for (double rho : cfg.sweep_rhos) {
          std::vector<double> all, last;
          for (const CellResult& c : cells) {
            if (!c.ok || c.key.env != env || c.key.cv_mode != m) continue;
            if (m != CvMode::value && (c.key.lambda_rho->first != lambda || c.key.lambda_rho->second != rho)) continue;
            all.push_back(c.mean_all);
            last.push_back(c.mean_last100);
          }
          if (all.empty()) continue;
          const MeanSe a = mean_se(all);
          const MeanSe l = mean_se(last);
          rows.push_back({env, lambda, rho, m, a.mean, l.mean, l.se, l.n});
        }
      }
    }
  }
  CsvWriter out(cfg.out / "sweep.csv",
                {"env", "lambda", "rho", "cv_mode", "mean_return_all", "mean_return_last100", "stderr"});
  for (const SweepRow& r : rows) {
    out << r.env << r.lambda << r.rho << mode_str(r.cv_mode) << r.mean_all << r.mean_last100 << r.stderr_last100;
    out.end_row();
  }
  out.close();
  CsvWriter failed(cfg.out / "failed.csv", {"env", "cv_mode", "lambda", "rho", "seed", "error"});
  for (const CellResult& c : cells) {
    if (c.ok) continue;
    failed << c.key.env << mode_str(c.key.cv_mode) << (c.key.lambda_rho ? c.key.lambda_rho->first : 0.0)
           << (c.key.lambda_rho ? c.key.lambda_rho->second : 0.0) << c.key.seed << c.error;
    failed.end_row();
  }
  failed.close();

  // lambda rows x rho columns of the last-100 mean, one block per (env, cv_mode)
  for (const std::string& env : cfg.envs) {
    for (CvMode m : cfg.cv_modes) {
      log << '\n' << env << " / " << cv_mode_name(m) << " (last-100 mean return)\n" << std::setw(10) << "lambda";
      for (double rho : cfg.sweep_rhos) log << std::setw(12) << ("rho=" + io::decimal(rho));
      log << '\n';
      for (double lambda : cfg.sweep_lambdas) {
        log << std::setw(10) << io::decimal(lambda);
        for (double rho : cfg.sweep_rhos) {
          const auto it = std::find_if(rows.begin(), rows.end(), [&](const SweepRow& r) {
            return r.env == env && r.cv_mode == m && r.lambda == lambda && r.rho == rho;
          });
          std::ostringstream cell;
          if (it != rows.end()) {
            cell << std::fixed << std::setprecision(2) << it->mean_last100;
          } else {
            cell << "failed";
          }
          log << std::setw(12) << cell.str();
        }
        log << '\n';
      }
    }
  }
  return rows;
}

}  // namespace ccv::harness
