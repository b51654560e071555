#include "lsjm/simulation.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "lsjm/em.hpp"
#include "lsjm/inference.hpp"
#include "lsjm/parallel.hpp"
#include "lsjm/prediction.hpp"
#include "lsjm/rng.hpp"

namespace lsjm {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

Mat SimDesign::sigma_theta() const {
  Mat s(2, 2);
  const double cov = rho * std::sqrt(var_b * var_omega);
  s << var_b, cov, cov, var_omega;
  return s;
}

Params SimDesign::truth() const {
  const ModelSpec spec = simulation_model_spec(VarianceMode::kHeterogeneous);
  Params p = Params::zeros(spec);
  p.beta = beta;
  p.tau = tau;
  p.gamma = gamma;
  p.alpha = alpha;
  p.sigma_theta = sigma_theta();
  return p;
}

ModelSpec simulation_model_spec(VarianceMode mode) {
  ModelSpec spec;
  spec.p1 = 5;
  spec.q_b = 1;
  spec.p2 = 3;
  spec.num_risks = 2;
  spec.variance_mode = mode;
  if (mode == VarianceMode::kHeterogeneous) {
    spec.p_w = 5;
    spec.q_omega = 1;
  } else {
    spec.p_w = 1;
    spec.q_omega = 0;
  }
  return spec;
}

DesignNames simulation_design_names(VarianceMode mode) {
  DesignNames names;
  names.x1 = {"(Intercept)", "X1", "X2", "X3", "time"};
  names.z = {"(Intercept)"};
  if (mode == VarianceMode::kHeterogeneous) {
    names.w = {"(Intercept)", "X1", "X2", "X3", "time"};
    names.v = {"(Intercept)"};
  } else {
    names.w = {"(Intercept)"};
  }
  names.x2 = {"X1", "X2", "X3"};
  return names;
}

SimulatedCohort simulate_cohort(const SimDesign& design, std::uint64_t stream) {
  if (design.n < 1) throw Error(ErrorCode::kInvalidSpec, "simulation needs n >= 1");
  if (design.gamma.size() != design.lambda0.size() || design.alpha.size() != design.lambda0.size()) {
    throw Error(ErrorCode::kInvalidSpec, "one gamma, alpha and baseline rate per cause");
  }
  Philox4x32 rng(design.seed, stream);
  std::normal_distribution<double> std_normal(0.0, 1.0);
  const Eigen::LLT<Mat> llt(design.sigma_theta());
  if (llt.info() != Eigen::Success) throw Error(ErrorCode::kNotPositiveDefinite, "design covariance");
  const Mat chol = llt.matrixL();

  SimulatedCohort out;
  out.covariates.resize(design.n, 3);
  out.theta.resize(design.n, 2);
  out.surv.reserve(static_cast<std::size_t>(design.n));
  for (int i = 0; i < design.n; ++i) {
    const std::string id = std::to_string(i + 1);
    const double x1 = uniform_open(rng) < 0.5 ? 1.0 : 0.0;
    const double x2 = -1.0 + 2.0 * uniform_open(rng);
    const double x3 = design.x3_mean + design.x3_sd * std_normal(rng);
    Vec e(2);
    e(0) = std_normal(rng);
    e(1) = std_normal(rng);
    const Vec theta = chol * e;
    const Vec cov = (Vec(3) << x1, x2, x3).finished();
    out.covariates.row(i) = cov.transpose();
    out.theta.row(i) = theta.transpose();

    double obs = design.censor_lo + (design.censor_hi - design.censor_lo) * uniform_open(rng);
    int cause = 0;
    for (std::size_t k = 0; k < design.lambda0.size(); ++k) {
      const double rate = design.lambda0[k] * std::exp(cov.dot(design.gamma[k]) + design.alpha[k].dot(theta));
      const double t = -std::log(uniform_open(rng)) / rate;
      if (t < obs) {
        obs = t;
        cause = static_cast<int>(k) + 1;
      }
    }
    out.surv.push_back({id, obs, cause, cov});

    for (int j = 0;; ++j) {
      const double t = j * design.visit_step;
      if (t > obs) break;
      LongitudinalRow row;
      row.subject_id = id;
      row.time = t;
      row.x1 = (Vec(5) << 1.0, x1, x2, x3, t).finished();
      row.z = Vec::Ones(1);
      row.w = row.x1;
      row.v = Vec::Ones(1);
      const double log_var = row.w.dot(design.tau) + theta(1);
      row.y = row.x1.dot(design.beta) + theta(0) + std::exp(0.5 * log_var) * std_normal(rng);
      out.rows.push_back(std::move(row));
    }
  }
  out.data = validate_dataset(out.rows, out.surv, simulation_model_spec(VarianceMode::kHeterogeneous));
  out.data.names = simulation_design_names(VarianceMode::kHeterogeneous);
  return out;
}

Dataset to_homogeneous(const Dataset& data) {
  Dataset out = data;
  out.spec.p_w = 1;
  out.spec.q_omega = 0;
  out.spec.variance_mode = VarianceMode::kHomogeneous;
  for (auto& s : out.subjects) {
    s.w = Mat::Ones(s.num_rows(), 1);
    s.v = Mat::Zero(s.num_rows(), 0);
  }
  out.names.w = {"(Intercept)"};
  out.names.v.clear();
  return out;
}

McReport monte_carlo_study(const SimDesign& design, const McOptions& options) {
  if (options.reps < 2) throw Error(ErrorCode::kInvalidSpec, "Monte Carlo study needs reps >= 2");
  McReport report;
  report.design = design;
  const Params truth = design.truth();
  const auto truth_names = parameter_names(simulation_model_spec(VarianceMode::kHeterogeneous));
  const Vec truth_flat = truth.flatten();
  std::map<std::string, double> truth_of;
  for (std::size_t j = 0; j < truth_names.size(); ++j) truth_of[truth_names[j]] = truth_flat(static_cast<Eigen::Index>(j));

  const std::size_t num_configs = options.configs.size();
  for (const auto mode : options.configs) {
    McConfigSummary c;
    c.config = std::string(to_string(mode));
    c.reps = options.reps;
    ModelSpec spec = simulation_model_spec(mode);
    c.names = parameter_names(spec);
    c.estimates = Mat::Constant(options.reps, spec.num_params(), kNaN);
    c.ses = Mat::Constant(options.reps, spec.num_params(), kNaN);
    c.converged.assign(static_cast<std::size_t>(options.reps), 0);
    report.configs.push_back(std::move(c));
  }
  std::vector<std::vector<std::string>> errors(static_cast<std::size_t>(options.reps) * num_configs);

  // Replicates run in parallel, each fit single threaded; every replicate owns its substream.
  parallel_for(static_cast<std::size_t>(options.reps), options.threads, [&](std::size_t r) {
    const SimulatedCohort cohort = simulate_cohort(design, static_cast<std::uint64_t>(r));
    for (std::size_t c = 0; c < num_configs; ++c) {
      const VarianceMode mode = options.configs[c];
      Dataset data = mode == VarianceMode::kHeterogeneous ? cohort.data : to_homogeneous(cohort.data);
      data.spec.quad_points = options.quad_points;
      data.spec.max_iter = options.max_iter;
      auto& summary = report.configs[c];
      try {
        FitOptions fo;
        fo.threads = 1;
        const FitResult fr = fit(data, fo);
        const auto ri = static_cast<Eigen::Index>(r);
        summary.estimates.row(ri) = fr.params.flatten().transpose();
        if (fr.cov_omega_hat.rows() == summary.estimates.cols()) {
          summary.ses.row(ri) = fr.cov_omega_hat.diagonal().cwiseSqrt().transpose();
        } else {
          errors[r * num_configs + c].push_back("replicate " + std::to_string(r) + " SE: " + fr.se_message);
        }
        summary.converged[r] = fr.converged ? 1 : 0;
        if (options.on_fit) options.on_fit(static_cast<int>(r), mode, fr);
      } catch (const Error& e) {
        errors[r * num_configs + c].push_back("replicate " + std::to_string(r) + ": " + e.what());
      }
    }
  });

  for (std::size_t c = 0; c < num_configs; ++c) {
    auto& summary = report.configs[c];
    for (int r = 0; r < options.reps; ++r) {
      const auto& errs = errors[static_cast<std::size_t>(r) * num_configs + c];
      for (const auto& e : errs) summary.failure_messages.push_back(e);
      const bool failed = std::isnan(summary.estimates(r, 0));
      if (failed) {
        ++summary.failures;
      } else {
        if (!summary.converged[static_cast<std::size_t>(r)]) ++summary.not_converged;
        if (std::isnan(summary.ses(r, 0))) ++summary.se_missing;
      }
    }
    for (std::size_t j = 0; j < summary.names.size(); ++j) {
      McParameterRow row;
      row.config = summary.config;
      row.parameter = summary.names[j];
      auto it = truth_of.find(row.parameter);
      // tau0 of the homogeneous fit estimates a pooled variance with no true counterpart
      const bool comparable = it != truth_of.end() &&
                              !(summary.config == "homogeneous" && row.parameter.rfind("tau", 0) == 0);
      row.truth = comparable ? it->second : kNaN;
      std::vector<double> est;
      std::vector<double> se;
      int covered = 0;
      for (int r = 0; r < options.reps; ++r) {
        const double e = summary.estimates(r, static_cast<Eigen::Index>(j));
        if (std::isnan(e)) continue;
        est.push_back(e);
        const double s = summary.ses(r, static_cast<Eigen::Index>(j));
        if (std::isfinite(s)) {
          se.push_back(s);
          if (comparable && std::abs(e - row.truth) <= 1.96 * s) ++covered;
        }
      }
      const double m = est.empty() ? kNaN : std::accumulate(est.begin(), est.end(), 0.0) / static_cast<double>(est.size());
      double ss = 0.0;
      for (double e : est) ss += (e - m) * (e - m);
      row.bias = comparable ? m - row.truth : kNaN;
      row.se = est.size() >= 2 ? std::sqrt(ss / static_cast<double>(est.size() - 1)) : kNaN;
      row.est_se = se.empty() ? kNaN : std::accumulate(se.begin(), se.end(), 0.0) / static_cast<double>(se.size());
      row.cp = comparable && !se.empty() ? 100.0 * covered / static_cast<double>(se.size()) : kNaN;
      row.used = static_cast<int>(se.size());
      report.rows.push_back(row);
    }
  }
  return report;
}

std::string format_mc_table(const McReport& report) {
  std::ostringstream os;
  os << "Monte Carlo study: n=" << report.design.n << ", seed=" << report.design.seed << ", rho=" << report.design.rho
     << "\n";
  for (const auto& c : report.configs) {
    os << c.config << ": reps=" << c.reps << " failures=" << c.failures << " not_converged=" << c.not_converged
       << " se_missing=" << c.se_missing << "\n";
  }
  // parameters in the order of the first configuration, other configurations aligned by name
  std::vector<std::string> order;
  for (const auto& row : report.rows) {
    if (std::find(order.begin(), order.end(), row.parameter) == order.end()) order.push_back(row.parameter);
  }
  auto cell = [](double v, int prec) {
    std::ostringstream s;
    if (std::isnan(v)) {
      s << "-";
    } else {
      s << std::fixed << std::setprecision(prec) << v;
    }
    return s.str();
  };
  os << std::left << std::setw(12) << "Parameter" << std::right << std::setw(8) << "True";
  for (const auto& c : report.configs) {
    os << " | " << std::setw(8) << "Bias" << std::setw(8) << "SE" << std::setw(9) << "Est.SE" << std::setw(7) << "CP";
    (void)c;
  }
  os << "\n";
  os << std::left << std::setw(20) << "";
  for (const auto& c : report.configs) os << " | " << std::left << std::setw(32) << c.config;
  os << "\n";
  for (const auto& name : order) {
    double truth = std::numeric_limits<double>::quiet_NaN();
    for (const auto& row : report.rows) {
      if (row.parameter == name && !std::isnan(row.truth)) truth = row.truth;
    }
    os << std::left << std::setw(12) << name << std::right << std::setw(8) << cell(truth, 2);
    for (const auto& c : report.configs) {
      const McParameterRow* found = nullptr;
      for (const auto& row : report.rows) {
        if (row.config == c.config && row.parameter == name) found = &row;
      }
      os << " | ";
      if (found == nullptr) {
        os << std::setw(8) << "-" << std::setw(8) << "-" << std::setw(9) << "-" << std::setw(7) << "-";
      } else {
        os << std::setw(8) << cell(found->bias, 3) << std::setw(8) << cell(found->se, 3) << std::setw(9)
           << cell(found->est_se, 3) << std::setw(7) << cell(found->cp, 1);
      }
    }
    os << "\n";
  }
  return os.str();
}

std::string mc_csv(const McReport& report) {
  std::ostringstream os;
  os << "config,parameter,true,bias,se,est_se,cp,used\n";
  for (const auto& r : report.rows) {
    os << r.config << ',' << r.parameter << ',' << format_double(r.truth) << ',' << format_double(r.bias) << ','
       << format_double(r.se) << ',' << format_double(r.est_se) << ',' << format_double(r.cp) << ',' << r.used << "\n";
  }
  return os.str();
}

double empirical_cif(std::span<const double> times, std::span<const int> causes, double landmark, double horizon,
                     int risk) {
  std::vector<std::size_t> at_risk;
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (times[i] > landmark) at_risk.push_back(i);
  }
  if (at_risk.empty()) throw Error(ErrorCode::kEmptyGroup, "no subjects at risk at the landmark");
  std::sort(at_risk.begin(), at_risk.end(), [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });
  double surv = 1.0;
  double cif = 0.0;
  std::size_t pos = 0;
  while (pos < at_risk.size() && times[at_risk[pos]] <= horizon) {
    const double t = times[at_risk[pos]];
    const double n_risk = static_cast<double>(at_risk.size() - pos);
    int d_all = 0;
    int d_k = 0;
    for (; pos < at_risk.size() && times[at_risk[pos]] == t; ++pos) {
      const int c = causes[at_risk[pos]];
      if (c > 0) ++d_all;
      if (c == risk) ++d_k;
    }
    cif += surv * d_k / n_risk;
    surv *= 1.0 - d_all / n_risk;
  }
  return cif;
}

std::vector<int> assign_folds(std::size_t n, int folds, std::uint64_t seed) {
  if (folds < 2) throw Error(ErrorCode::kInvalidSpec, "need at least two folds");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Philox4x32 rng(seed, 0x43565ull);
  std::shuffle(perm.begin(), perm.end(), rng);
  const std::size_t block = n / static_cast<std::size_t>(folds);
  std::vector<int> fold(n, 0);
  for (std::size_t p = 0; p < n; ++p) {
    const std::size_t f = p < block * static_cast<std::size_t>(folds) ? p / block : p - block * static_cast<std::size_t>(folds);
    fold[perm[p]] = static_cast<int>(f);
  }
  return fold;
}

double quartile_mape(std::span<const double> predicted, std::span<const double> times, std::span<const int> causes,
                     double landmark, double horizon, int risk) {
  const std::size_t m = predicted.size();
  if (m < 4) throw Error(ErrorCode::kInsufficientRiskSet, "fewer than four subjects at risk at the landmark");
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return predicted[a] < predicted[b]; });
  double total = 0.0;
  for (std::size_t g = 0; g < 4; ++g) {
    const std::size_t lo = g * m / 4;
    const std::size_t hi = (g + 1) * m / 4;
    std::vector<double> t;
    std::vector<int> c;
    double mean_pred = 0.0;
    for (std::size_t p = lo; p < hi; ++p) {
      t.push_back(times[order[p]]);
      c.push_back(causes[order[p]]);
      mean_pred += predicted[order[p]];
    }
    mean_pred /= static_cast<double>(hi - lo);
    total += std::abs(empirical_cif(t, c, landmark, horizon, risk) - mean_pred);
  }
  return total / 4.0;
}

std::vector<MapeRow> mape_cv(const Dataset& data, const MapeOptions& options) {
  const auto fold = assign_folds(data.size(), options.folds, options.seed);
  const std::size_t num_h = options.horizons.size();
  const int num_risks = data.spec.num_risks;
  std::vector<MapeRow> rows;
  for (const auto mode : options.configs) {
    const Dataset base = mode == data.spec.variance_mode ? data : to_homogeneous(data);
    std::vector<double> sums(static_cast<std::size_t>(num_risks) * num_h, 0.0);
    for (int l = 0; l < options.folds; ++l) {
      std::vector<std::size_t> train;
      std::vector<std::size_t> valid;
      for (std::size_t i = 0; i < data.size(); ++i) {
        if (fold[i] == l) {
          if (base.subjects[i].obs_time > options.landmark) valid.push_back(i);
        } else {
          train.push_back(i);
        }
      }
      Dataset training = subset(base, train);
      training.spec.quad_points = options.quad_points;
      training.spec.max_iter = options.max_iter;
      FitOptions fo;
      fo.threads = options.threads;
      fo.compute_se = false;
      const FitResult fr = fit(training, fo);

      std::vector<Mat> pred(valid.size());
      parallel_for(valid.size(), options.threads, [&](std::size_t v) {
        PredictionRequest req;
        req.history = base.subjects[valid[v]];
        req.landmark = options.landmark;
        req.horizons = options.horizons;
        pred[v] = conditional_cif(req, fr).cif;
      });
      std::vector<double> times;
      std::vector<int> causes;
      for (std::size_t i : valid) {
        times.push_back(base.subjects[i].obs_time);
        causes.push_back(base.subjects[i].cause);
      }
      for (int k = 0; k < num_risks; ++k) {
        for (std::size_t h = 0; h < num_h; ++h) {
          std::vector<double> p(valid.size());
          for (std::size_t v = 0; v < valid.size(); ++v) p[v] = pred[v](k, static_cast<Eigen::Index>(h));
          sums[static_cast<std::size_t>(k) * num_h + h] +=
              quartile_mape(p, times, causes, options.landmark, options.horizons[h], k + 1);
        }
      }
    }
    for (int k = 0; k < num_risks; ++k) {
      for (std::size_t h = 0; h < num_h; ++h) {
        rows.push_back({std::string(to_string(mode)), k + 1, options.horizons[h],
                        sums[static_cast<std::size_t>(k) * num_h + h] / options.folds});
      }
    }
  }
  return rows;
}

std::string mape_csv(const std::vector<MapeRow>& rows) {
  std::ostringstream os;
  os << "config,risk,horizon,mape\n";
  for (const auto& r : rows) {
    os << r.config << ',' << r.risk << ',' << format_double(r.horizon) << ',' << format_double(r.mape) << "\n";
  }
  return os.str();
}

}  // namespace lsjm
