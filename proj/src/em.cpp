#include "lsjm/em.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <chrono>
#include <cmath>
#include <numbers>
#include <sstream>

#include "lsjm/inference.hpp"
#include "lsjm/parallel.hpp"

namespace lsjm {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

double row_quadratic(const SubjectData& s, const PosteriorSummary& post, Eigen::Index j, double r) {
  // r^2 E[e] - 2 r z'E[b e] + z'E[b b' e] z
  const Eigen::Index qb = s.z.cols();
  const Eigen::Map<const Mat> bb(post.row_bb_scale.col(j).data(), qb, qb);
  const auto z = s.z.row(j);
  return r * r * post.row_scale(j) - 2.0 * r * z.dot(post.row_b_scale.col(j)) + z * bb * z.transpose();
}

std::vector<Vec> lookup_all(const SortedCohort& cohort, const std::vector<BaselineHazard>& baselines) {
  std::vector<Vec> out;
  out.reserve(baselines.size());
  for (const auto& h : baselines) out.push_back(lookup_cumhaz(h, cohort));
  return out;
}

Vec solve_spd(const Mat& a, const Vec& b, ErrorCode code, const char* what) {
  const Vec ev = Eigen::SelfAdjointEigenSolver<Mat>(a, Eigen::EigenvaluesOnly).eigenvalues();
  if (!ev.allFinite() || !(ev(0) > 1e-14 * ev.cwiseAbs().maxCoeff())) {
    throw Error(code, std::string(what) + " is singular");
  }
  Eigen::LDLT<Mat> ldlt(a);
  Vec x = ldlt.solve(b);
  if (!x.allFinite()) throw Error(code, std::string(what) + " produced a non-finite solution");
  return x;
}

}  // namespace

std::vector<SurvivalTerms> cohort_survival_terms(const SortedCohort& cohort,
                                                 const std::vector<BaselineHazard>& baselines) {
  const std::size_t n = cohort.size();
  std::vector<SurvivalTerms> out(n);
  const auto cum = lookup_all(cohort, baselines);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].cumhaz.resize(static_cast<Eigen::Index>(baselines.size()));
    for (std::size_t k = 0; k < baselines.size(); ++k) {
      out[i].cumhaz(static_cast<Eigen::Index>(k)) = cum[k](static_cast<Eigen::Index>(i));
    }
    const int d = cohort.cause(i);
    if (d > 0) {
      const auto& h = baselines.at(static_cast<std::size_t>(d - 1));
      out[i].log_jump = std::log(h.jumps.at(static_cast<std::size_t>(cohort.event_slot(i))));
    }
  }
  return out;
}

EStepCache e_step(const Dataset& data, const SortedCohort& cohort, const Params& params,
                  const std::vector<BaselineHazard>& baselines, const GaussHermiteRule& rule, int threads,
                  unsigned requests) {
  EStepCache cache;
  cache.grid = rescale_grid(rule, params.sigma_theta);
  cache.surv = cohort_survival_terms(cohort, baselines);
  cache.subjects.resize(data.size());
  parallel_for(data.size(), threads, [&](std::size_t i) {
    cache.subjects[i] = posterior_expectations(data.subjects[i], params, cache.surv[i], cache.grid, requests);
  });
  double total = 0.0;
  for (const auto& s : cache.subjects) total += s.log_marginal;
  cache.loglik = total;
  return cache;
}

std::vector<BaselineHazard> update_baseline(const Dataset& data, const SortedCohort& cohort, const EStepCache& cache,
                                            const Params& params) {
  const int num_risks = data.spec.num_risks;
  const auto n = static_cast<Eigen::Index>(data.size());
  std::vector<BaselineHazard> out;
  out.reserve(static_cast<std::size_t>(num_risks));
  for (int k = 0; k < num_risks; ++k) {
    Mat weight(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& s = data.subjects[static_cast<std::size_t>(i)];
      weight(i, 0) = std::exp(s.x2.dot(params.gamma[static_cast<std::size_t>(k)])) *
                     cache.subjects[static_cast<std::size_t>(i)].risk_exp(k);
    }
    const Mat denom = riskset_sums(cohort, k, weight);
    const auto& ties = cohort.ties(k);
    std::vector<double> jumps(ties.size());
    for (std::size_t j = 0; j < ties.size(); ++j) {
      const double d = denom(static_cast<Eigen::Index>(j), 0);
      if (!(d > 0.0) || !std::isfinite(d)) {
        throw Error(ErrorCode::kZeroDenominator, "empty weighted risk set for cause " + std::to_string(k + 1));
      }
      jumps[j] = ties[j] / d;
    }
    out.push_back(BaselineHazard::from_jumps(cohort.event_times(k), ties, std::move(jumps)));
  }
  return out;
}

BaselineHazard update_baseline_naive(const Dataset& data, const SortedCohort& cohort, const EStepCache& cache,
                                     const Params& params, int k) {
  const auto& times = cohort.event_times(k);
  std::vector<double> jumps(times.size());
  for (std::size_t j = 0; j < times.size(); ++j) {
    double denom = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto& s = data.subjects[i];
      if (s.obs_time >= times[j]) {
        denom += std::exp(s.x2.dot(params.gamma[static_cast<std::size_t>(k)])) * cache.subjects[i].risk_exp(k);
      }
    }
    jumps[j] = cohort.ties(k)[j] / denom;
  }
  return BaselineHazard::from_jumps(times, cohort.ties(k), std::move(jumps));
}

Vec update_beta(const Dataset& data, const EStepCache& cache, const Params& params) {
  const int p1 = data.spec.p1;
  Mat gram = Mat::Zero(p1, p1);
  Vec rhs = Vec::Zero(p1);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& s = data.subjects[i];
    const auto& post = cache.subjects[i];
    const Vec inv_var = (-(s.w * params.tau)).array().exp();
    const Vec wt = inv_var.cwiseProduct(post.row_scale);
    gram.noalias() += s.x1.transpose() * wt.asDiagonal() * s.x1;
    // y E[e] - z'E[b e]
    const Vec target = s.y.cwiseProduct(post.row_scale) - (s.z.cwiseProduct(post.row_b_scale.transpose())).rowwise().sum();
    rhs.noalias() += s.x1.transpose() * inv_var.cwiseProduct(target);
  }
  return solve_spd(gram, rhs, ErrorCode::kSingularGram, "weighted Gram matrix of X1");
}

Mat update_sigma_theta(const EStepCache& cache) {
  if (cache.subjects.empty()) throw Error(ErrorCode::kInputError, "empty cache");
  Mat total = Mat::Zero(cache.subjects[0].second_moment.rows(), cache.subjects[0].second_moment.cols());
  for (const auto& s : cache.subjects) total += s.second_moment;
  total /= static_cast<double>(cache.subjects.size());
  Mat sym = 0.5 * (total + total.transpose());
  Eigen::LLT<Mat> llt(sym);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::kLostPositiveDefiniteness,
                "updated random-effect covariance is not positive definite; try more quadrature points");
  }
  return sym;
}

double q_tau(const Dataset& data, const EStepCache& cache, const Params& params, const Vec& tau) {
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& s = data.subjects[i];
    const auto& post = cache.subjects[i];
    const Vec wt = s.w * tau;
    const Vec resid = s.y - s.x1 * params.beta;
    for (Eigen::Index j = 0; j < s.num_rows(); ++j) {
      total += -0.5 * wt(j) - 0.5 * std::exp(-wt(j)) * row_quadratic(s, post, j, resid(j));
    }
  }
  return total;
}

NewtonSystem tau_system(const Dataset& data, const EStepCache& cache, const Params& params) {
  const int pw = data.spec.p_w;
  NewtonSystem sys{Mat::Zero(pw, pw), Vec::Zero(pw)};
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& s = data.subjects[i];
    const auto& post = cache.subjects[i];
    const Vec wt = s.w * params.tau;
    const Vec resid = s.y - s.x1 * params.beta;
    for (Eigen::Index j = 0; j < s.num_rows(); ++j) {
      const double scaled = std::exp(-wt(j)) * row_quadratic(s, post, j, resid(j));
      const auto w = s.w.row(j).transpose();
      sys.score += 0.5 * (scaled - 1.0) * w;
      sys.information += 0.5 * scaled * w * w.transpose();
    }
  }
  return sys;
}

double q_risk(const Dataset& data, const EStepCache& cache, const std::vector<Vec>& cumhaz, const Params& params,
              int k, const Vec& gamma_k, const Vec& alpha_k) {
  const auto& alpha_old = params.alpha[static_cast<std::size_t>(k)];
  const bool same_alpha = alpha_k == alpha_old;
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& s = data.subjects[i];
    const auto& post = cache.subjects[i];
    const double lin = s.x2.dot(gamma_k);
    if (s.cause == k + 1) total += lin + alpha_k.dot(post.mean);
    const double lam = cumhaz[static_cast<std::size_t>(k)](static_cast<Eigen::Index>(i));
    if (lam == 0.0) continue;
    const double e = same_alpha ? post.risk_exp(k) : posterior_exp_alpha(post.node_weights, cache.grid, alpha_k);
    total -= lam * std::exp(lin) * e;
  }
  return total;
}

NewtonSystem gamma_system(const Dataset& data, const EStepCache& cache, const std::vector<Vec>& cumhaz,
                          const Params& params, int k) {
  const int p2 = data.spec.p2;
  NewtonSystem sys{Mat::Zero(p2, p2), Vec::Zero(p2)};
  const auto& gamma = params.gamma[static_cast<std::size_t>(k)];
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& s = data.subjects[i];
    if (s.cause == k + 1) sys.score += s.x2;
    const double lam = cumhaz[static_cast<std::size_t>(k)](static_cast<Eigen::Index>(i));
    const double m = lam * std::exp(s.x2.dot(gamma)) * cache.subjects[i].risk_exp(k);
    sys.score -= m * s.x2;
    sys.information += m * s.x2 * s.x2.transpose();
  }
  return sys;
}

NewtonSystem alpha_system(const Dataset& data, const EStepCache& cache, const std::vector<Vec>& cumhaz,
                          const Params& params, int k) {
  const int q = data.spec.q();
  NewtonSystem sys{Mat::Zero(q, q), Vec::Zero(q)};
  const auto& gamma = params.gamma[static_cast<std::size_t>(k)];
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& s = data.subjects[i];
    const auto& post = cache.subjects[i];
    if (s.cause == k + 1) sys.score += post.mean;
    const double lam = cumhaz[static_cast<std::size_t>(k)](static_cast<Eigen::Index>(i));
    const double m = lam * std::exp(s.x2.dot(gamma));
    sys.score -= m * post.risk_theta_exp.col(k);
    sys.information += m * Eigen::Map<const Mat>(post.risk_theta2_exp.col(k).data(), q, q);
  }
  return sys;
}

NewtonSystem gamma_system_naive(const Dataset& data, const SortedCohort& cohort, const EStepCache& cache,
                                const BaselineHazard& baseline, const Params& params, int k) {
  const int p2 = data.spec.p2;
  NewtonSystem sys{Mat::Zero(p2, p2), Vec::Zero(p2)};
  const auto& gamma = params.gamma[static_cast<std::size_t>(k)];
  const auto& times = cohort.event_times(k);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& s = data.subjects[i];
    if (s.cause == k + 1) sys.score += s.x2;
    const double e = std::exp(s.x2.dot(gamma)) * cache.subjects[i].risk_exp(k);
    for (std::size_t j = 0; j < times.size(); ++j) {
      if (times[j] > s.obs_time) continue;
      sys.score -= baseline.jumps[j] * e * s.x2;
      sys.information += baseline.jumps[j] * e * s.x2 * s.x2.transpose();
    }
  }
  return sys;
}

NewtonSystem alpha_system_naive(const Dataset& data, const SortedCohort& cohort, const EStepCache& cache,
                                const BaselineHazard& baseline, const Params& params, int k) {
  const int q = data.spec.q();
  NewtonSystem sys{Mat::Zero(q, q), Vec::Zero(q)};
  const auto& gamma = params.gamma[static_cast<std::size_t>(k)];
  const auto& times = cohort.event_times(k);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& s = data.subjects[i];
    const auto& post = cache.subjects[i];
    if (s.cause == k + 1) sys.score += post.mean;
    const double e = std::exp(s.x2.dot(gamma));
    const Mat tt = Eigen::Map<const Mat>(post.risk_theta2_exp.col(k).data(), q, q);
    for (std::size_t j = 0; j < times.size(); ++j) {
      if (times[j] > s.obs_time) continue;
      sys.score -= baseline.jumps[j] * e * post.risk_theta_exp.col(k);
      sys.information += baseline.jumps[j] * e * tt;
    }
  }
  return sys;
}

Vec newton_step(const Vec& current, const NewtonSystem& system, const std::function<double(const Vec&)>& objective,
                const char* block) {
  if (current.size() == 0) return current;
  Vec step = solve_spd(system.information, system.score, ErrorCode::kSingularInformation, block);
  const double base = objective(current);
  for (int h = 0; h <= kMaxHalvings; ++h) {
    const Vec candidate = current + step;
    const double value = objective(candidate);
    if (std::isfinite(value) && value >= base) return candidate;
    step *= 0.5;
  }
  return current;
}

Vec update_tau(const Dataset& data, const EStepCache& cache, const Params& params) {
  const NewtonSystem sys = tau_system(data, cache, params);
  return newton_step(params.tau, sys, [&](const Vec& t) { return q_tau(data, cache, params, t); },
                     "information for tau");
}

Vec update_gamma(const Dataset& data, const EStepCache& cache, const std::vector<Vec>& cumhaz, const Params& params,
                 int k) {
  const auto kk = static_cast<std::size_t>(k);
  if (data.spec.p2 == 0) return params.gamma[kk];
  const NewtonSystem sys = gamma_system(data, cache, cumhaz, params, k);
  if (sys.information.isZero(0.0) && sys.score.isZero(0.0)) return params.gamma[kk];
  return newton_step(params.gamma[kk], sys,
                     [&](const Vec& g) { return q_risk(data, cache, cumhaz, params, k, g, params.alpha[kk]); },
                     "information for gamma");
}

Vec update_alpha(const Dataset& data, const EStepCache& cache, const std::vector<Vec>& cumhaz, const Params& params,
                 int k) {
  const auto kk = static_cast<std::size_t>(k);
  const NewtonSystem sys = alpha_system(data, cache, cumhaz, params, k);
  if (sys.information.isZero(0.0) && sys.score.isZero(0.0)) return params.alpha[kk];
  return newton_step(params.alpha[kk], sys,
                     [&](const Vec& a) { return q_risk(data, cache, cumhaz, params, k, params.gamma[kk], a); },
                     "information for alpha");
}

double q_function(const Dataset& data, const SortedCohort& cohort, const EStepCache& cache, const Params& params,
                  const std::vector<BaselineHazard>& baselines) {
  double total = 0.0;
  const Eigen::Index qw = data.spec.q_omega;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& s = data.subjects[i];
    const auto& post = cache.subjects[i];
    const Vec wt = s.w * params.tau;
    const Vec resid = s.y - s.x1 * params.beta;
    const Vec e_omega = post.mean.tail(qw);
    for (Eigen::Index j = 0; j < s.num_rows(); ++j) {
      const double vw = qw > 0 ? s.v.row(j).dot(e_omega) : 0.0;
      total += -0.5 * kLog2Pi - 0.5 * wt(j) - 0.5 * vw - 0.5 * std::exp(-wt(j)) * row_quadratic(s, post, j, resid(j));
    }
  }
  const auto cumhaz = lookup_all(cohort, baselines);
  for (int k = 0; k < data.spec.num_risks; ++k) {
    total += q_risk(data, cache, cumhaz, params, k, params.gamma[static_cast<std::size_t>(k)],
                    params.alpha[static_cast<std::size_t>(k)]);
    const auto& h = baselines[static_cast<std::size_t>(k)];
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (data.subjects[i].cause == k + 1) total += std::log(h.jumps[static_cast<std::size_t>(cohort.event_slot(i))]);
    }
  }
  Eigen::LLT<Mat> llt(params.sigma_theta);
  if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
  const Mat inv = llt.solve(Mat::Identity(params.sigma_theta.rows(), params.sigma_theta.cols()));
  const Mat lmat = llt.matrixL();
  const double logdet = 2.0 * lmat.diagonal().array().log().sum();
  const double q = static_cast<double>(params.sigma_theta.rows());
  for (const auto& post : cache.subjects) {
    total += -0.5 * q * kLog2Pi - 0.5 * logdet - 0.5 * (inv.cwiseProduct(post.second_moment)).sum();
  }
  return total;
}

double observed_loglik(const Dataset& data, const SortedCohort& cohort, const Params& params,
                       const std::vector<BaselineHazard>& baselines, const GaussHermiteRule& rule, int threads) {
  return e_step(data, cohort, params, baselines, rule, threads, 0u).loglik;
}

InitialValues initial_values(const Dataset& data, const SortedCohort& cohort) {
  const ModelSpec& spec = data.spec;
  InitialValues init;
  Params& p = init.params;
  p = Params::zeros(spec);

  Mat gram = Mat::Zero(spec.p1, spec.p1);
  Vec rhs = Vec::Zero(spec.p1);
  for (const auto& s : data.subjects) {
    gram.noalias() += s.x1.transpose() * s.x1;
    rhs.noalias() += s.x1.transpose() * s.y;
  }
  p.beta = solve_spd(gram, rhs, ErrorCode::kSingularGram, "Gram matrix of X1");
  bool intercept = spec.p_w > 0;
  double ss = 0.0;
  double count = 0.0;
  for (const auto& s : data.subjects) {
    ss += (s.y - s.x1 * p.beta).squaredNorm();
    count += static_cast<double>(s.num_rows());
    if (spec.p_w > 0) intercept = intercept && (s.w.col(0).array() == 1.0).all();
  }
  if (intercept) p.tau(0) = std::log(ss / count);
  p.sigma_theta = 0.1 * Mat::Identity(spec.q(), spec.q());

  // Cox fit without latent terms: theta fixed at 0 through a one-node grid.
  EStepCache cache;
  cache.grid.dim = spec.q();
  cache.grid.standard_nodes = Mat::Zero(spec.q(), 1);
  cache.grid.nodes = Mat::Zero(spec.q(), 1);
  cache.grid.log_weights = Vec::Zero(1);
  cache.subjects.resize(data.size());
  for (auto& s : cache.subjects) {
    s.mean = Vec::Zero(spec.q());
    s.risk_exp = Vec::Ones(spec.num_risks);
    s.node_weights = Vec::Ones(1);
  }
  for (int it = 0; it < 200; ++it) {
    init.baselines = update_baseline(data, cohort, cache, p);
    const auto cumhaz = lookup_all(cohort, init.baselines);
    double change = 0.0;
    for (int k = 0; k < spec.num_risks; ++k) {
      const auto kk = static_cast<std::size_t>(k);
      const Vec g = update_gamma(data, cache, cumhaz, p, k);
      change = std::max(change, (g - p.gamma[kk]).cwiseAbs().maxCoeff());
      p.gamma[kk] = g;
    }
    if (spec.p2 == 0 || change < 1e-9) break;
  }
  init.baselines = update_baseline(data, cohort, cache, p);
  return init;
}

double max_relative_change(const Vec& old_flat, const Vec& new_flat) {
  return ((new_flat - old_flat).array().abs() / (old_flat.array().abs() + 1e-3)).maxCoeff();
}

InitialValues em_iteration(const Dataset& data, const SortedCohort& cohort, const Params& params,
                           const std::vector<BaselineHazard>& baselines, const GaussHermiteRule& rule, int threads,
                           double* loglik) {
  const EStepCache cache = e_step(data, cohort, params, baselines, rule, threads);
  if (loglik != nullptr) *loglik = cache.loglik;
  InitialValues next;
  next.baselines = update_baseline(data, cohort, cache, params);
  const auto cumhaz = lookup_all(cohort, next.baselines);
  Params& p = next.params;
  p = params;
  p.beta = update_beta(data, cache, params);
  p.sigma_theta = update_sigma_theta(cache);
  // tau uses the residuals at the new beta
  p.tau = update_tau(data, cache, p);
  for (int k = 0; k < data.spec.num_risks; ++k) {
    p.gamma[static_cast<std::size_t>(k)] = update_gamma(data, cache, cumhaz, p, k);
  }
  for (int k = 0; k < data.spec.num_risks; ++k) {
    p.alpha[static_cast<std::size_t>(k)] = update_alpha(data, cache, cumhaz, p, k);
  }
  return next;
}

FitResult fit(const Dataset& data, const FitOptions& options, const std::optional<InitialValues>& init) {
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  data.spec.validate();
  const SortedCohort cohort = SortedCohort::from_dataset(data);
  const GaussHermiteRule rule = gauss_hermite_rule(data.spec.quad_points);

  InitialValues current = init ? *init : initial_values(data, cohort);
  current.params.check_sigma();

  FitResult result;
  result.spec = data.spec;
  result.names = data.names;
  for (const auto& s : data.subjects) result.subject_ids.push_back(s.id);

  auto fail_nonfinite = [&](int iter) {
    std::ostringstream msg;
    msg << "log-likelihood not finite at iteration " << iter << "; trace:";
    for (double v : result.loglik_trace) msg << ' ' << v;
    throw Error(ErrorCode::kNonFiniteLoglik, msg.str());
  };

  double loglik = 0.0;
  for (int iter = 1; iter <= data.spec.max_iter; ++iter) {
    InitialValues next = em_iteration(data, cohort, current.params, current.baselines, rule, options.threads, &loglik);
    if (!std::isfinite(loglik)) fail_nonfinite(iter);
    result.loglik_trace.push_back(loglik);
    const double change = max_relative_change(current.params.flatten(), next.params.flatten());
    const std::size_t m = result.loglik_trace.size();
    const double ll_change =
        m >= 2 ? std::abs(result.loglik_trace[m - 1] - result.loglik_trace[m - 2]) / std::abs(result.loglik_trace[m - 2])
               : std::numeric_limits<double>::infinity();
    current = std::move(next);
    result.n_iter = iter;
    if (options.on_iteration) options.on_iteration({iter, loglik, change});
    if (change < data.spec.tol_param && ll_change < data.spec.tol_loglik) {
      result.converged = true;
      break;
    }
  }

  // Profile the baselines at the final parameters, then summarize the posterior there.
  EStepCache cache = e_step(data, cohort, current.params, current.baselines, rule, options.threads);
  current.baselines = update_baseline(data, cohort, cache, current.params);
  cache = e_step(data, cohort, current.params, current.baselines, rule, options.threads);
  if (!std::isfinite(cache.loglik)) fail_nonfinite(result.n_iter + 1);
  result.loglik_trace.push_back(cache.loglik);

  result.params = current.params;
  result.baselines = current.baselines;
  result.posterior_means.resize(static_cast<Eigen::Index>(data.size()), data.spec.q());
  for (std::size_t i = 0; i < data.size(); ++i) {
    result.posterior_means.row(static_cast<Eigen::Index>(i)) = cache.subjects[i].mean.transpose();
  }
  const auto em_done = Clock::now();
  result.em_seconds = std::chrono::duration<double>(em_done - start).count();

  if (options.compute_se) {
    try {
      const Mat scores = subject_scores(data, cohort, cache, result.params);
      result.cov_omega_hat = empirical_fisher_covariance(scores, parameter_names(data.spec));
    } catch (const Error& e) {
      result.se_message = e.what();
    }
  }
  result.se_seconds = std::chrono::duration<double>(Clock::now() - em_done).count();
  return result;
}

}  // namespace lsjm
