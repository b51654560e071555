#pragma once

#include <string>
#include <vector>

#include "lsjm/em.hpp"
#include "lsjm/model.hpp"

namespace lsjm {

/// Per-subject gradient of the longitudinal and random-effect parts: (beta, tau, vech Sigma).
Vec score_beta_tau_sigma(const SubjectData& subject, const PosteriorSummary& post, const Params& params);

/**
 * Profile scores for (gamma_k, alpha_k) of every subject, rows in dataset order,
 * columns (gamma_k, alpha_k). Risk-set sums at the event times come from
 * riskset_sums, the sums over t_kj <= T_i from prefix_score_scan.
 */
Mat score_gamma_alpha(const Dataset& data, const SortedCohort& cohort, const EStepCache& cache, const Params& params,
                      int k);
/// Same contract, quadratic loops over subjects and event times.
Mat score_gamma_alpha_naive(const Dataset& data, const SortedCohort& cohort, const EStepCache& cache,
                            const Params& params, int k);

/// n x num_params matrix of per-subject scores in Params::flatten order.
Mat subject_scores(const Dataset& data, const SortedCohort& cohort, const EStepCache& cache, const Params& params);

/// Inverse of sum_i s_i s_i'. Throws SingularInformation naming the null-space direction.
Mat empirical_fisher_covariance(const Mat& scores, const std::vector<std::string>& names);

struct SeRow {
  std::string parameter;
  double estimate = 0.0;
  double se = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  double z = 0.0;
  double p = 0.0;
};

/// Wald table; se and the derived columns are NaN when the covariance is missing.
std::vector<SeRow> se_table(const FitResult& fit);

}  // namespace lsjm
