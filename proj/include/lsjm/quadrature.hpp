#pragma once

#include <vector>

#include "lsjm/model.hpp"

namespace lsjm {

/// Gauss-Hermite rule for the weight function exp(-x^2).
struct GaussHermiteRule {
  std::vector<double> abscissas;
  std::vector<double> weights;

  int order() const { return static_cast<int>(abscissas.size()); }
};

GaussHermiteRule gauss_hermite_rule(int n);

/**
 * Tensor-product grid over the q random effects.
 *
 * With theta = sqrt(2) L x and L L' = Sigma, a normal-prior integral becomes
 *   int g(theta) phi(theta; Sigma) dtheta = pi^(-q/2) int g(sqrt(2) L x) exp(-|x|^2) dx,
 * so the prior density, its normalizing constant and the Jacobian collapse into
 * the per-node weight pi_t * pi^(-q/2). Those weights sum to one and are kept in
 * log form in `log_weights`.
 */
struct QuadGrid {
  int dim = 0;
  Mat standard_nodes;  // q x G, unscaled abscissa tuples
  Vec log_weights;     // G, log(pi_t) - (q/2) log(pi)
  Mat sqrt_sigma;      // lower Cholesky factor
  Mat nodes;           // q x G, sqrt(2) L x_t

  Eigen::Index size() const { return log_weights.size(); }
};

QuadGrid rescale_grid(const GaussHermiteRule& rule, const Mat& sigma_theta);

/// Per-subject survival inputs evaluated from the current baselines.
struct SurvivalTerms {
  Vec cumhaz;             // Lambda_0k(T_i), k = 1..K
  double log_jump = 0.0;  // log dLambda_0,D_i(T_i); unused when censored
};

/// Binary-search evaluation for a single subject (the cohort path uses the linear scan).
SurvivalTerms survival_terms(const SubjectData& subject, const std::vector<BaselineHazard>& baselines);

enum MomentRequest : unsigned {
  kThetaMoments = 1u << 0,  // E[theta], E[theta theta']
  kRowScale = 1u << 1,      // E[e^{-v'w}], E[b e^{-v'w}], E[b b' e^{-v'w}] per row
  kRiskExp = 1u << 2,       // E[e^{a'theta}], E[theta e^{a'theta}], E[theta theta' e^{a'theta}] per risk
  kNodeWeights = 1u << 3,   // posterior mass at every grid node
  kAllMoments = kThetaMoments | kRowScale | kRiskExp | kNodeWeights,
};

struct PosteriorSummary {
  double log_marginal = 0.0;  // log f(Y_i, T_i, D_i)
  Vec mean;
  Mat second_moment;
  Vec row_scale;        // n_i
  Mat row_b_scale;      // q_b x n_i
  Mat row_bb_scale;     // (q_b*q_b) x n_i, column-major vec of each q_b x q_b block
  Vec risk_exp;         // K
  Mat risk_theta_exp;   // q x K
  Mat risk_theta2_exp;  // (q*q) x K
  Vec node_weights;     // G
};

/// Log of f(Y_i | theta) f(T_i, D_i | theta) at every grid node, without the prior weight.
Vec node_log_density(const SubjectData& subject, const Params& params, const SurvivalTerms& surv,
                     const QuadGrid& grid);

/// Log f(Y | theta) at every node using only the first `num_rows` measurements.
Vec longitudinal_log_density(const SubjectData& subject, Eigen::Index num_rows, const Params& params,
                             const QuadGrid& grid);

PosteriorSummary posterior_expectations(const SubjectData& subject, const Params& params,
                                        const SurvivalTerms& surv, const QuadGrid& grid,
                                        unsigned requests = kAllMoments);

/// E[exp(alpha' theta)] for an arbitrary alpha, reusing stored posterior node weights.
double posterior_exp_alpha(const Vec& node_weights, const QuadGrid& grid, const Vec& alpha);

}  // namespace lsjm
