#include "cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <mutex>
#include <optional>
#include <sstream>

#include "lsjm/em.hpp"
#include "lsjm/inference.hpp"
#include "lsjm/io.hpp"
#include "lsjm/parallel.hpp"

namespace lsjm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<int> quad_points;
  std::optional<std::string> variance_mode;
  std::optional<std::string> out;
  std::optional<std::string> longitudinal;
  std::optional<std::string> survival;
  std::optional<int> max_iter;
  std::optional<int> n;
  std::optional<int> reps;
  std::optional<int> folds;
  std::optional<int> runs;
  std::optional<std::string> model;
  std::optional<double> landmark;
  std::vector<double> horizons;
  std::vector<int> sizes;
  bool no_naive = false;
  bool quiet = false;
};

void common_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "JSON run configuration");
  cmd->add_option("--seed", o.seed, "random seed");
  cmd->add_option("--threads", o.threads, "worker threads (default: all cores)")->check(CLI::PositiveNumber);
  cmd->add_option("--quad-points", o.quad_points, "Gauss-Hermite points per dimension")->check(CLI::PositiveNumber);
  cmd->add_option("--variance-mode", o.variance_mode, "heterogeneous or homogeneous")
      ->check(CLI::IsMember({"heterogeneous", "homogeneous"}));
  cmd->add_option("--out", o.out, "output directory");
}

RunConfig resolve_config(const Overrides& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : load_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (o.threads) c.threads = *o.threads;
  if (o.quad_points) c.spec.quad_points = *o.quad_points;
  if (o.variance_mode) c.spec.variance_mode = parse_variance_mode(*o.variance_mode);
  if (o.out) c.out_dir = *o.out;
  if (o.longitudinal) c.longitudinal_csv = *o.longitudinal;
  if (o.survival) c.survival_csv = *o.survival;
  if (o.max_iter) c.spec.max_iter = *o.max_iter;
  if (o.n) c.design.n = *o.n;
  if (o.reps) c.reps = *o.reps;
  if (o.folds) c.crossval.folds = *o.folds;
  if (o.runs) c.crossval_runs = *o.runs;
  if (o.model) c.model = *o.model;
  if (o.landmark) c.landmark = *o.landmark;
  if (!o.horizons.empty()) c.horizons = o.horizons;
  if (!o.sizes.empty()) c.bench_sizes = o.sizes;
  if (o.no_naive) c.bench_naive = false;
  c.design.seed = c.seed;
  c.crossval.seed = c.seed;
  return c;
}

// Both configs unless the variance mode was chosen explicitly.
std::vector<VarianceMode> config_modes(const Overrides& o, const RunConfig& c) {
  if (o.variance_mode) return {c.spec.variance_mode};
  return {VarianceMode::kHeterogeneous, VarianceMode::kHomogeneous};
}

int cmd_fit(const Overrides& o, std::ostream& out, std::ostream& err) {
  const RunConfig c = resolve_config(o);
  const Dataset data = load_dataset(c);
  FitOptions opts;
  opts.threads = c.thread_count();
  if (!o.quiet) {
    opts.on_iteration = [&err](const IterationRecord& r) {
      err << json{{"iteration", r.iteration}, {"loglik", r.loglik}, {"max_param_delta", r.max_param_change}}.dump()
          << '\n';
    };
  }
  const FitResult fr = fit(data, opts);
  const ColumnMap cols = c.columns.for_mode(c.spec.variance_mode);
  save_fit(c.out_dir / "fit.json", fr, cols);
  write_text(c.out_dir / "se.csv", se_csv(se_table(fr)));
  write_text(c.out_dir / "loglik.csv", loglik_csv(fr.loglik_trace));
  out << "subjects " << data.size() << ", measurements " << data.num_measurements() << "\n";
  out << "iterations " << fr.n_iter << (fr.converged ? ", converged" : ", NOT converged") << "\n";
  out << "loglik " << format_double(fr.loglik_trace.empty() ? 0.0 : fr.loglik_trace.back()) << "\n";
  if (!fr.se_message.empty()) err << "standard errors unavailable: " << fr.se_message << '\n';
  out << "wrote " << (c.out_dir / "fit.json").string() << ", se.csv, loglik.csv\n";
  return fr.converged ? 0 : 2;
}

int cmd_simulate(const Overrides& o, std::ostream& out) {
  const RunConfig c = resolve_config(o);
  const SimulatedCohort cohort = simulate_cohort(c.design, 0);
  write_simulated(cohort, c.out_dir / "longitudinal.csv", c.out_dir / "survival.csv");
  const json cfg = {{"longitudinal", "longitudinal.csv"},
                    {"survival", "survival.csv"},
                    {"seed", c.seed},
                    {"model", {{"num_risks", static_cast<int>(c.design.lambda0.size())}}}};
  write_text(c.out_dir / "config.json", cfg.dump(1) + "\n");
  int counts[3] = {0, 0, 0};
  for (const auto& s : cohort.surv) ++counts[std::min(s.cause, 2)];
  out << "subjects " << cohort.surv.size() << ", measurements " << cohort.rows.size() << ", censored "
      << counts[0] << ", cause 1 " << counts[1] << ", cause 2 " << counts[2] << "\n";
  out << "wrote " << (c.out_dir / "longitudinal.csv").string() << ", survival.csv, config.json\n";
  return 0;
}

int cmd_mc(const Overrides& o, std::ostream& out, std::ostream& err) {
  const RunConfig c = resolve_config(o);
  McOptions opts;
  opts.reps = c.reps;
  opts.configs = config_modes(o, c);
  opts.threads = c.thread_count();
  opts.quad_points = c.spec.quad_points;
  opts.max_iter = c.spec.max_iter;
  std::mutex err_mutex;
  if (!o.quiet) {
    opts.on_fit = [&err, &err_mutex](int rep, VarianceMode mode, const FitResult& fr) {
      const std::lock_guard<std::mutex> lock(err_mutex);
      err << json{{"rep", rep}, {"config", std::string(to_string(mode))}, {"iterations", fr.n_iter},
                  {"converged", fr.converged}}
                 .dump()
          << '\n';
    };
  }
  const McReport report = monte_carlo_study(c.design, opts);
  const std::string table = format_mc_table(report);
  write_text(c.out_dir / "mc.csv", mc_csv(report));
  write_text(c.out_dir / "mc_table.txt", table);
  out << table;
  for (const auto& s : report.configs) {
    out << s.config << ": " << s.failures << " failed, " << s.not_converged << " not converged, " << s.se_missing
        << " without SE out of " << s.reps << "\n";
  }
  return 0;
}

int cmd_predict(const Overrides& o, std::ostream& out, std::ostream& err) {
  const RunConfig c = resolve_config(o);
  if (c.model.empty()) throw Error(ErrorCode::kInputError, "predict needs --model");
  const LoadedFit loaded = load_fit(c.model);
  const auto histories = load_histories(c, loaded.columns);
  std::vector<std::optional<PredictionResult>> results(histories.size());
  std::vector<std::string> problems(histories.size());
  parallel_for(histories.size(), c.thread_count(), [&](std::size_t i) {
    try {
      results[i] = conditional_cif({histories[i], c.landmark, c.horizons}, loaded.fit);
    } catch (const Error& e) {
      problems[i] = e.what();
    }
  });
  std::vector<PredictionResult> ok;
  bool beyond = false;
  for (std::size_t i = 0; i < histories.size(); ++i) {
    if (!results[i]) {
      err << "skipped subject " << histories[i].id << ": " << problems[i] << '\n';
      continue;
    }
    if (results[i]->landmark_beyond_data) {
      err << "subject " << histories[i].id << ": landmark after the last event time, CIF reported as 0\n";
    }
    beyond = beyond || results[i]->horizon_beyond_data;
    ok.push_back(std::move(*results[i]));
  }
  if (beyond) err << "horizons after the last event time use a constant cumulative hazard\n";
  write_text(c.out_dir / "predictions.csv", prediction_csv(ok));
  out << "predicted " << ok.size() << " of " << histories.size() << " subjects\n";
  out << "wrote " << (c.out_dir / "predictions.csv").string() << "\n";
  return 0;
}

int cmd_crossval(const Overrides& o, std::ostream& out, std::ostream& err) {
  const RunConfig c = resolve_config(o);
  MapeOptions opts = c.crossval;
  opts.configs = config_modes(o, c);
  opts.threads = c.thread_count();
  opts.quad_points = c.spec.quad_points;
  opts.max_iter = c.spec.max_iter;
  const bool own_data = !c.longitudinal_csv.empty();
  const int runs = own_data ? 1 : c.crossval_runs;
  std::ostringstream csv;
  csv << "run,config,risk,horizon,mape\n";
  int wins = 0;
  int compared = 0;
  for (int run = 0; run < runs; ++run) {
    Dataset data;
    if (own_data) {
      data = load_dataset(c);
    } else {
      data = simulate_cohort(c.design, static_cast<std::uint64_t>(run)).data;
    }
    opts.seed = c.seed + static_cast<std::uint64_t>(run);
    const auto rows = mape_cv(data, opts);
    double het = 0.0;
    double hom = 0.0;
    for (const auto& r : rows) {
      csv << run << ',' << r.config << ',' << r.risk << ',' << format_double(r.horizon) << ','
          << format_double(r.mape) << '\n';
      if (r.risk == 2) (r.config == "heterogeneous" ? het : hom) += r.mape;
    }
    if (opts.configs.size() == 2) {
      ++compared;
      wins += het <= hom;
    }
    if (!o.quiet) err << json{{"run", run}, {"risk2_mape_heterogeneous", het}, {"risk2_mape_homogeneous", hom}}.dump() << '\n';
  }
  write_text(c.out_dir / "mape.csv", csv.str());
  if (compared > 0) {
    out << "heterogeneous risk-2 MAPE <= homogeneous in " << wins << " of " << compared << " runs\n";
  }
  out << "wrote " << (c.out_dir / "mape.csv").string() << "\n";
  return 0;
}

int cmd_bench(const Overrides& o, std::ostream& out) {
  const RunConfig c = resolve_config(o);
  const auto rows = benchmark_kernels(c.bench_sizes, c.seed, c.bench_naive);
  const std::string csv = bench_csv(rows);
  write_text(c.out_dir / "bench.csv", csv);
  out << csv;
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Joint location-scale longitudinal and competing-risks survival models", "lsjm"};
  app.require_subcommand(1);
  Overrides o;

  auto* fit_cmd = app.add_subcommand("fit", "fit a joint model to CSV data");
  common_flags(fit_cmd, o);
  fit_cmd->add_option("--longitudinal", o.longitudinal, "longitudinal CSV");
  fit_cmd->add_option("--survival", o.survival, "survival CSV");
  fit_cmd->add_option("--max-iter", o.max_iter, "EM iteration cap");
  fit_cmd->add_flag("--quiet", o.quiet, "no per-iteration progress");

  auto* sim_cmd = app.add_subcommand("simulate", "write a simulated cohort");
  common_flags(sim_cmd, o);
  sim_cmd->add_option("--n", o.n, "subjects")->check(CLI::PositiveNumber);

  auto* mc_cmd = app.add_subcommand("mc", "Monte Carlo bias and coverage study");
  common_flags(mc_cmd, o);
  mc_cmd->add_option("--n", o.n, "subjects per replicate")->check(CLI::PositiveNumber);
  mc_cmd->add_option("--reps", o.reps, "replicates")->check(CLI::PositiveNumber);
  mc_cmd->add_option("--max-iter", o.max_iter, "EM iteration cap");
  mc_cmd->add_flag("--quiet", o.quiet, "no per-replicate progress");

  auto* pred_cmd = app.add_subcommand("predict", "dynamic cumulative incidence from a fitted model");
  common_flags(pred_cmd, o);
  pred_cmd->add_option("--model", o.model, "fit artifact (fit.json)");
  pred_cmd->add_option("--longitudinal", o.longitudinal, "history CSV");
  pred_cmd->add_option("--survival", o.survival, "survival covariates CSV");
  pred_cmd->add_option("--landmark", o.landmark, "landmark time s");
  pred_cmd->add_option("--horizons", o.horizons, "horizon times u")->delimiter(',');

  auto* cv_cmd = app.add_subcommand("crossval", "cross-validated MAPE of dynamic predictions");
  common_flags(cv_cmd, o);
  cv_cmd->add_option("--longitudinal", o.longitudinal, "longitudinal CSV (default: simulate)");
  cv_cmd->add_option("--survival", o.survival, "survival CSV");
  cv_cmd->add_option("--n", o.n, "subjects per simulated run")->check(CLI::PositiveNumber);
  cv_cmd->add_option("--folds", o.folds, "folds")->check(CLI::PositiveNumber);
  cv_cmd->add_option("--runs", o.runs, "simulated runs")->check(CLI::PositiveNumber);
  cv_cmd->add_option("--max-iter", o.max_iter, "EM iteration cap");
  cv_cmd->add_flag("--quiet", o.quiet, "no per-run progress");

  auto* bench_cmd = app.add_subcommand("bench", "time the risk-set kernels");
  common_flags(bench_cmd, o);
  bench_cmd->add_option("--sizes", o.sizes, "cohort sizes")->delimiter(',');
  bench_cmd->add_flag("--no-naive", o.no_naive, "skip the quadratic reference kernels");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o_msg;
    std::ostringstream e_msg;
    const int code = app.exit(e, o_msg, e_msg);
    out << o_msg.str();
    err << e_msg.str();
    return code == 0 ? 0 : 1;
  }

  try {
    if (*fit_cmd) return cmd_fit(o, out, err);
    if (*sim_cmd) return cmd_simulate(o, out);
    if (*mc_cmd) return cmd_mc(o, out, err);
    if (*pred_cmd) return cmd_predict(o, out, err);
    if (*cv_cmd) return cmd_crossval(o, out, err);
    if (*bench_cmd) return cmd_bench(o, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace lsjm
