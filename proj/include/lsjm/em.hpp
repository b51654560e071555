#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "lsjm/model.hpp"
#include "lsjm/quadrature.hpp"
#include "lsjm/riskset.hpp"

namespace lsjm {

/// Posterior summaries for every subject (dataset order) under the current parameters.
struct EStepCache {
  QuadGrid grid;
  std::vector<SurvivalTerms> surv;
  std::vector<PosteriorSummary> subjects;
  double loglik = 0.0;
};

/// Lambda_0k(T_i) by linear scan and the log jump at each subject's own event time.
std::vector<SurvivalTerms> cohort_survival_terms(const SortedCohort& cohort,
                                                 const std::vector<BaselineHazard>& baselines);

EStepCache e_step(const Dataset& data, const SortedCohort& cohort, const Params& params,
                  const std::vector<BaselineHazard>& baselines, const GaussHermiteRule& rule, int threads = 1,
                  unsigned requests = kAllMoments);

/// Breslow-type jumps d_kl / sum_{r in R(t_kl)} exp(x2'gamma_k) E[exp(alpha_k'theta_r)].
std::vector<BaselineHazard> update_baseline(const Dataset& data, const SortedCohort& cohort, const EStepCache& cache,
                                            const Params& params);
BaselineHazard update_baseline_naive(const Dataset& data, const SortedCohort& cohort, const EStepCache& cache,
                                     const Params& params, int k);

Vec update_beta(const Dataset& data, const EStepCache& cache, const Params& params);
Mat update_sigma_theta(const EStepCache& cache);

/// Newton system of one block: information (negative Hessian of Q) and score.
struct NewtonSystem {
  Mat information;
  Vec score;
};

// Q restricted to one block with everything else held at `params` and the cache fixed.
double q_tau(const Dataset& data, const EStepCache& cache, const Params& params, const Vec& tau);
double q_risk(const Dataset& data, const EStepCache& cache, const std::vector<Vec>& cumhaz, const Params& params,
              int k, const Vec& gamma_k, const Vec& alpha_k);

NewtonSystem tau_system(const Dataset& data, const EStepCache& cache, const Params& params);
NewtonSystem gamma_system(const Dataset& data, const EStepCache& cache, const std::vector<Vec>& cumhaz,
                          const Params& params, int k);
NewtonSystem alpha_system(const Dataset& data, const EStepCache& cache, const std::vector<Vec>& cumhaz,
                          const Params& params, int k);
/// Double-loop versions of the gamma/alpha systems (sum over t_kj <= T_i term by term).
NewtonSystem gamma_system_naive(const Dataset& data, const SortedCohort& cohort, const EStepCache& cache,
                                const BaselineHazard& baseline, const Params& params, int k);
NewtonSystem alpha_system_naive(const Dataset& data, const SortedCohort& cohort, const EStepCache& cache,
                                const BaselineHazard& baseline, const Params& params, int k);

constexpr int kMaxHalvings = 10;

/// One Newton step with step halving on `objective`; returns the old value if no halving helps.
Vec newton_step(const Vec& current, const NewtonSystem& system, const std::function<double(const Vec&)>& objective,
                const char* block);

Vec update_tau(const Dataset& data, const EStepCache& cache, const Params& params);
Vec update_gamma(const Dataset& data, const EStepCache& cache, const std::vector<Vec>& cumhaz, const Params& params,
                 int k);
Vec update_alpha(const Dataset& data, const EStepCache& cache, const std::vector<Vec>& cumhaz, const Params& params,
                 int k);

/// Full expected complete-data log-likelihood Q(params, baselines; cache), up to constants.
double q_function(const Dataset& data, const SortedCohort& cohort, const EStepCache& cache, const Params& params,
                  const std::vector<BaselineHazard>& baselines);

double observed_loglik(const Dataset& data, const SortedCohort& cohort, const Params& params,
                       const std::vector<BaselineHazard>& baselines, const GaussHermiteRule& rule, int threads = 1);

struct InitialValues {
  Params params;
  std::vector<BaselineHazard> baselines;
};

/// Working-independence start: OLS beta, tau_0 from the residual variance, Sigma = 0.1 I,
/// gamma from a cause-specific Cox fit without latent terms, alpha = 0.
InitialValues initial_values(const Dataset& data, const SortedCohort& cohort);

struct IterationRecord {
  int iteration = 0;
  double loglik = 0.0;
  double max_param_change = 0.0;
};

struct FitOptions {
  int threads = 1;
  bool compute_se = true;
  std::function<void(const IterationRecord&)> on_iteration;
};

/// Maximum over components of |new - old| / (|old| + 1e-3).
double max_relative_change(const Vec& old_flat, const Vec& new_flat);

/// Runs EM to convergence. The returned baselines are re-profiled at the final parameters.
FitResult fit(const Dataset& data, const FitOptions& options = {}, const std::optional<InitialValues>& init = {});

/// One complete E+M iteration (used by the scaling check).
InitialValues em_iteration(const Dataset& data, const SortedCohort& cohort, const Params& params,
                           const std::vector<BaselineHazard>& baselines, const GaussHermiteRule& rule, int threads,
                           double* loglik = nullptr);

}  // namespace lsjm
