#include "lsjm/quadrature.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace lsjm {

GaussHermiteRule gauss_hermite_rule(int n) {
  if (n < 1) throw Error(ErrorCode::kInvalidSpec, "Gauss-Hermite order must be >= 1");
  constexpr double kEps = 3.0e-15;
  constexpr int kMaxNewton = 100;
  const double pim4 = std::pow(std::numbers::pi, -0.25);

  GaussHermiteRule rule;
  rule.abscissas.assign(static_cast<std::size_t>(n), 0.0);
  rule.weights.assign(static_cast<std::size_t>(n), 0.0);

  // Starting points are the eigenvalues of the Jacobi matrix (largest first);
  // Newton on the orthonormal Hermite recurrence polishes each root and gives
  // the weight.
  Vec diag = Vec::Zero(n);
  Vec sub(std::max(n - 1, 0));
  for (int j = 1; j < n; ++j) sub(j - 1) = std::sqrt(j / 2.0);
  Eigen::SelfAdjointEigenSolver<Mat> jacobi;
  jacobi.computeFromTridiagonal(diag, sub, Eigen::EigenvaluesOnly);
  const int m = (n + 1) / 2;
  double z = 0.0;
  for (int i = 0; i < m; ++i) {
    z = jacobi.eigenvalues()(n - 1 - i);
    double pp = 0.0;
    bool converged = false;
    for (int it = 0; it < kMaxNewton; ++it) {
      double p1 = pim4;
      double p2 = 0.0;
      for (int j = 1; j <= n; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = z * std::sqrt(2.0 / j) * p2 - std::sqrt((j - 1.0) / j) * p3;
      }
      pp = std::sqrt(2.0 * n) * p2;
      const double z1 = z;
      z = z1 - p1 / pp;
      if (std::abs(z - z1) <= kEps * std::max(1.0, std::abs(z))) {
        converged = true;
        // one more evaluation at the converged root for the weight
        p1 = pim4;
        p2 = 0.0;
        for (int j = 1; j <= n; ++j) {
          const double p3 = p2;
          p2 = p1;
          p1 = z * std::sqrt(2.0 / j) * p2 - std::sqrt((j - 1.0) / j) * p3;
        }
        pp = std::sqrt(2.0 * n) * p2;
        break;
      }
    }
    if (!converged) throw Error(ErrorCode::kInvalidSpec, "Gauss-Hermite root iteration did not converge; order too large");
    const auto lo = static_cast<std::size_t>(i);
    const auto hi = static_cast<std::size_t>(n - 1 - i);
    if (lo == hi) z = 0.0;
    rule.abscissas[lo] = z;
    rule.abscissas[hi] = -z;
    rule.weights[lo] = 2.0 / (pp * pp);
    rule.weights[hi] = rule.weights[lo];
  }
  return rule;
}

QuadGrid rescale_grid(const GaussHermiteRule& rule, const Mat& sigma_theta) {
  const auto q = static_cast<int>(sigma_theta.rows());
  if (sigma_theta.cols() != q) throw Error(ErrorCode::kNotPositiveDefinite, "sigma_theta is not square");
  const int nq = rule.order();
  Eigen::Index total = 1;
  for (int d = 0; d < q; ++d) total *= nq;

  QuadGrid grid;
  grid.dim = q;
  grid.standard_nodes.resize(q, total);
  grid.log_weights.resize(total);
  const double log_norm = 0.5 * q * std::log(std::numbers::pi);
  std::vector<double> log_w(rule.weights.size());
  for (std::size_t i = 0; i < log_w.size(); ++i) log_w[i] = std::log(rule.weights[i]);

  for (Eigen::Index t = 0; t < total; ++t) {
    Eigen::Index rem = t;
    double lw = -log_norm;
    for (int d = 0; d < q; ++d) {
      const auto digit = static_cast<std::size_t>(rem % nq);
      rem /= nq;
      grid.standard_nodes(d, t) = rule.abscissas[digit];
      lw += log_w[digit];
    }
    grid.log_weights(t) = lw;
  }

  if (q == 0) {
    grid.sqrt_sigma.resize(0, 0);
    grid.nodes.resize(0, total);
    return grid;
  }
  Eigen::LLT<Mat> llt(sigma_theta);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::kNotPositiveDefinite, "Cholesky factorization of sigma_theta failed");
  }
  grid.sqrt_sigma = llt.matrixL();
  grid.nodes = std::numbers::sqrt2 * grid.sqrt_sigma * grid.standard_nodes;
  return grid;
}

SurvivalTerms survival_terms(const SubjectData& subject, const std::vector<BaselineHazard>& baselines) {
  SurvivalTerms out;
  out.cumhaz.resize(static_cast<Eigen::Index>(baselines.size()));
  for (std::size_t k = 0; k < baselines.size(); ++k) {
    out.cumhaz(static_cast<Eigen::Index>(k)) = baselines[k].at(subject.obs_time);
  }
  if (subject.cause > 0) {
    const auto& h = baselines.at(static_cast<std::size_t>(subject.cause - 1));
    double jump = 0.0;
    for (std::size_t j = 0; j < h.size(); ++j) {
      if (h.times[j] == subject.obs_time) jump = h.jumps[j];
    }
    out.log_jump = std::log(jump);
  }
  return out;
}

Vec longitudinal_log_density(const SubjectData& s, Eigen::Index num_rows, const Params& params,
                             const QuadGrid& grid) {
  const Eigen::Index qb = s.z.cols();
  const Eigen::Index qw = s.v.cols();
  const Eigen::Index g = grid.size();
  if (num_rows == 0) return Vec::Zero(g);

  const Vec resid = s.y.head(num_rows) - s.x1.topRows(num_rows) * params.beta;
  const Vec wtau = s.w.topRows(num_rows) * params.tau;
  Mat mean_shift = s.z.topRows(num_rows) * grid.nodes.topRows(qb);
  Mat log_var = s.v.topRows(num_rows) * grid.nodes.bottomRows(qw);
  log_var.colwise() += wtau;
  mean_shift = (-mean_shift).colwise() + resid;

  constexpr double kHalfLog2Pi = 0.91893853320467274178;
  const auto terms = log_var.array() + mean_shift.array().square() * (-log_var.array()).exp();
  Vec out = -0.5 * terms.colwise().sum().transpose();
  out.array() -= static_cast<double>(num_rows) * kHalfLog2Pi;
  return out;
}

Vec node_log_density(const SubjectData& s, const Params& params, const SurvivalTerms& surv,
                     const QuadGrid& grid) {
  Vec out = longitudinal_log_density(s, s.num_rows(), params, grid);
  const auto num_risks = static_cast<int>(params.gamma.size());
  for (int k = 0; k < num_risks; ++k) {
    const double lin = s.x2.dot(params.gamma[static_cast<std::size_t>(k)]);
    Vec eta = grid.nodes.transpose() * params.alpha[static_cast<std::size_t>(k)];
    eta.array() += lin;
    out.array() -= surv.cumhaz(k) * eta.array().exp();
    if (s.cause == k + 1) out.array() += surv.log_jump + eta.array();
  }
  return out;
}

PosteriorSummary posterior_expectations(const SubjectData& s, const Params& params, const SurvivalTerms& surv,
                                        const QuadGrid& grid, unsigned requests) {
  PosteriorSummary out;
  Vec log_post = node_log_density(s, params, surv, grid) + grid.log_weights;
  const double shift = log_post.maxCoeff();
  if (!std::isfinite(shift)) {
    throw Error(ErrorCode::kDegenerateDensity, "no finite node density for subject " + s.id);
  }
  Vec weights = (log_post.array() - shift).exp();
  const double total = weights.sum();
  out.log_marginal = shift + std::log(total);
  if (!(total > 0.0) || !std::isfinite(out.log_marginal)) {
    throw Error(ErrorCode::kDegenerateDensity, "posterior normalizer vanished for subject " + s.id);
  }
  weights /= total;

  const Mat& theta = grid.nodes;
  const Eigen::Index q = theta.rows();
  const Eigen::Index qb = s.z.cols();
  const Eigen::Index qw = s.v.cols();

  if (requests & kThetaMoments) {
    out.mean = theta * weights;
    out.second_moment = theta * weights.asDiagonal() * theta.transpose();
  }
  if (requests & kRowScale) {
    const Eigen::Index ni = s.num_rows();
    const Mat scale = (-(s.v * theta.bottomRows(qw))).array().exp().matrix();  // n_i x G
    const auto b_nodes = theta.topRows(qb);
    out.row_scale = scale * weights;
    out.row_b_scale.resize(qb, ni);
    out.row_bb_scale.resize(qb * qb, ni);
    for (Eigen::Index j = 0; j < ni; ++j) {
      const Vec wj = scale.row(j).transpose().cwiseProduct(weights);
      out.row_b_scale.col(j) = b_nodes * wj;
      const Mat bb = b_nodes * wj.asDiagonal() * b_nodes.transpose();
      out.row_bb_scale.col(j) = Eigen::Map<const Vec>(bb.data(), bb.size());
    }
  }
  if (requests & kRiskExp) {
    const auto num_risks = static_cast<Eigen::Index>(params.alpha.size());
    out.risk_exp.resize(num_risks);
    out.risk_theta_exp.resize(q, num_risks);
    out.risk_theta2_exp.resize(q * q, num_risks);
    for (Eigen::Index k = 0; k < num_risks; ++k) {
      const Vec wk =
          (theta.transpose() * params.alpha[static_cast<std::size_t>(k)]).array().exp().matrix().cwiseProduct(
              weights);
      out.risk_exp(k) = wk.sum();
      out.risk_theta_exp.col(k) = theta * wk;
      const Mat tt = theta * wk.asDiagonal() * theta.transpose();
      out.risk_theta2_exp.col(k) = Eigen::Map<const Vec>(tt.data(), tt.size());
    }
  }
  if (requests & kNodeWeights) out.node_weights = std::move(weights);
  return out;
}

double posterior_exp_alpha(const Vec& node_weights, const QuadGrid& grid, const Vec& alpha) {
  return (grid.nodes.transpose() * alpha).array().exp().matrix().dot(node_weights);
}

}  // namespace lsjm
