#include "lsjm/inference.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace lsjm {

namespace {

Mat sigma_gradient(const Mat& sigma, const Mat& second_moment) {
  Eigen::LLT<Mat> llt(sigma);
  const Mat inv = llt.solve(Mat::Identity(sigma.rows(), sigma.cols()));
  return 0.5 * (inv * second_moment * inv - inv);
}

}  // namespace

Vec score_beta_tau_sigma(const SubjectData& s, const PosteriorSummary& post, const Params& params) {
  const Eigen::Index p1 = params.beta.size();
  const Eigen::Index pw = params.tau.size();
  const Eigen::Index q = params.sigma_theta.rows();
  const Eigen::Index qb = s.z.cols();
  Vec out = Vec::Zero(p1 + pw + q * (q + 1) / 2);

  const Vec inv_var = (-(s.w * params.tau)).array().exp();
  const Vec resid = s.y - s.x1 * params.beta;
  for (Eigen::Index j = 0; j < s.num_rows(); ++j) {
    const auto z = s.z.row(j);
    const double zb = z.dot(post.row_b_scale.col(j));
    const Eigen::Map<const Mat> bb(post.row_bb_scale.col(j).data(), qb, qb);
    const double r = resid(j);
    const double quad = r * r * post.row_scale(j) - 2.0 * r * zb + z * bb * z.transpose();
    out.head(p1) += inv_var(j) * (r * post.row_scale(j) - zb) * s.x1.row(j).transpose();
    out.segment(p1, pw) += 0.5 * (inv_var(j) * quad - 1.0) * s.w.row(j).transpose();
  }
  const Mat g = sigma_gradient(params.sigma_theta, post.second_moment);
  Eigen::Index pos = p1 + pw;
  for (Eigen::Index c = 0; c < q; ++c) {
    for (Eigen::Index r = c; r < q; ++r) out(pos++) = r == c ? g(r, c) : g(r, c) + g(c, r);
  }
  return out;
}

Mat score_gamma_alpha(const Dataset& data, const SortedCohort& cohort, const EStepCache& cache, const Params& params,
                      int k) {
  const auto kk = static_cast<std::size_t>(k);
  const auto n = static_cast<Eigen::Index>(data.size());
  const Eigen::Index p2 = data.spec.p2;
  const Eigen::Index q = data.spec.q();
  const Eigen::Index width = 1 + p2 + q;

  // columns: exp(x'g) E[e^{a'theta}], the same times x, exp(x'g) E[theta e^{a'theta}]
  Mat values(n, width);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = data.subjects[static_cast<std::size_t>(i)];
    const auto& post = cache.subjects[static_cast<std::size_t>(i)];
    const double e = std::exp(s.x2.dot(params.gamma[kk]));
    const double a = e * post.risk_exp(k);
    values(i, 0) = a;
    values.block(i, 1, 1, p2) = a * s.x2.transpose();
    values.block(i, 1 + p2, 1, q) = e * post.risk_theta_exp.col(k).transpose();
  }
  const Mat sums = riskset_sums(cohort, k, values);
  const auto& ties = cohort.ties(k);
  Mat per_event(sums.rows(), width);
  for (Eigen::Index j = 0; j < sums.rows(); ++j) {
    const double s0 = sums(j, 0);
    if (!(s0 > 0.0)) throw Error(ErrorCode::kZeroDenominator, "empty weighted risk set in score");
    const double d = ties[static_cast<std::size_t>(j)];
    per_event(j, 0) = d / s0;
    per_event.row(j).tail(width - 1) = d * sums.row(j).tail(width - 1) / (s0 * s0);
  }
  const Mat prefix = prefix_score_scan(cohort, k, per_event);

  Mat out(n, p2 + q);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = data.subjects[static_cast<std::size_t>(i)];
    const auto& post = cache.subjects[static_cast<std::size_t>(i)];
    const double a = values(i, 0);
    Vec g = -a * prefix(i, 0) * s.x2 + a * prefix.block(i, 1, 1, p2).transpose();
    Vec al = -prefix(i, 0) * values.block(i, 1 + p2, 1, q).transpose() + a * prefix.block(i, 1 + p2, 1, q).transpose();
    if (s.cause == k + 1) {
      const auto j = static_cast<Eigen::Index>(cohort.event_slot(static_cast<std::size_t>(i)));
      g += s.x2 - sums.block(j, 1, 1, p2).transpose() / sums(j, 0);
      al += post.mean - sums.block(j, 1 + p2, 1, q).transpose() / sums(j, 0);
    }
    out.block(i, 0, 1, p2) = g.transpose();
    out.block(i, p2, 1, q) = al.transpose();
  }
  return out;
}

Mat score_gamma_alpha_naive(const Dataset& data, const SortedCohort& cohort, const EStepCache& cache,
                            const Params& params, int k) {
  const auto kk = static_cast<std::size_t>(k);
  const std::size_t n = data.size();
  const Eigen::Index p2 = data.spec.p2;
  const Eigen::Index q = data.spec.q();
  const auto& times = cohort.event_times(k);
  const auto& ties = cohort.ties(k);

  // Risk-set sums recomputed from scratch for every (subject, event time) pair.
  auto riskset = [&](double t, double& s0, Vec& s1, Vec& st) {
    s0 = 0.0;
    s1 = Vec::Zero(p2);
    st = Vec::Zero(q);
    for (std::size_t r = 0; r < n; ++r) {
      const auto& sr = data.subjects[r];
      if (sr.obs_time < t) continue;
      const double e = std::exp(sr.x2.dot(params.gamma[kk]));
      s0 += e * cache.subjects[r].risk_exp(k);
      s1 += e * cache.subjects[r].risk_exp(k) * sr.x2;
      st += e * cache.subjects[r].risk_theta_exp.col(k);
    }
  };

  Mat out = Mat::Zero(static_cast<Eigen::Index>(n), p2 + q);
  double s0 = 0.0;
  Vec s1;
  Vec st;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = data.subjects[i];
    const auto& post = cache.subjects[i];
    const double e = std::exp(s.x2.dot(params.gamma[kk]));
    Vec g = Vec::Zero(p2);
    Vec al = Vec::Zero(q);
    if (s.cause == k + 1) {
      riskset(s.obs_time, s0, s1, st);
      g += s.x2 - s1 / s0;
      al += post.mean - st / s0;
    }
    for (std::size_t j = 0; j < times.size(); ++j) {
      if (times[j] > s.obs_time) continue;
      riskset(times[j], s0, s1, st);
      const double d = ties[j];
      g += e * post.risk_exp(k) * d * (s1 / (s0 * s0)) - e * post.risk_exp(k) * (d / s0) * s.x2;
      al += e * post.risk_exp(k) * d * (st / (s0 * s0)) - e * (d / s0) * post.risk_theta_exp.col(k);
    }
    out.block(static_cast<Eigen::Index>(i), 0, 1, p2) = g.transpose();
    out.block(static_cast<Eigen::Index>(i), p2, 1, q) = al.transpose();
  }
  return out;
}

Mat subject_scores(const Dataset& data, const SortedCohort& cohort, const EStepCache& cache, const Params& params) {
  const ModelSpec& spec = data.spec;
  const auto n = static_cast<Eigen::Index>(data.size());
  const Eigen::Index head = spec.p1 + spec.p_w + spec.num_sigma_params();
  const Eigen::Index p2 = spec.p2;
  const Eigen::Index q = spec.q();
  const Eigen::Index num_risks = spec.num_risks;
  Mat out(n, spec.num_params());
  for (Eigen::Index i = 0; i < n; ++i) {
    out.block(i, 0, 1, head) =
        score_beta_tau_sigma(data.subjects[static_cast<std::size_t>(i)], cache.subjects[static_cast<std::size_t>(i)],
                             params)
            .transpose();
  }
  for (int k = 0; k < spec.num_risks; ++k) {
    const Mat block = score_gamma_alpha(data, cohort, cache, params, k);
    out.block(0, head + k * p2, n, p2) = block.leftCols(p2);
    out.block(0, head + num_risks * p2 + k * q, n, q) = block.rightCols(q);
  }
  return out;
}

Mat empirical_fisher_covariance(const Mat& scores, const std::vector<std::string>& names) {
  const Mat info = scores.transpose() * scores;
  Eigen::SelfAdjointEigenSolver<Mat> es(info);
  const Vec ev = es.eigenvalues();
  const double largest = ev.cwiseAbs().maxCoeff();
  if (!(ev(0) > 1e-12 * largest) || !std::isfinite(largest)) {
    const Vec dir = es.eigenvectors().col(0);
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(dir.size()));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    std::sort(idx.begin(), idx.end(), [&](Eigen::Index a, Eigen::Index b) { return std::abs(dir(a)) > std::abs(dir(b)); });
    std::ostringstream msg;
    msg << "empirical information is singular (smallest eigenvalue " << ev(0) << "); null direction:";
    for (std::size_t j = 0; j < std::min<std::size_t>(idx.size(), 4); ++j) {
      const auto c = idx[j];
      if (std::abs(dir(c)) < 1e-3) break;
      const std::string name = static_cast<std::size_t>(c) < names.size() ? names[static_cast<std::size_t>(c)]
                                                                         : std::to_string(c);
      msg << ' ' << name << '=' << dir(c);
    }
    throw Error(ErrorCode::kSingularInformation, msg.str());
  }
  const Mat cov = es.eigenvectors() * ev.cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (cov + cov.transpose());
}

std::vector<SeRow> se_table(const FitResult& fit) {
  const Vec est = fit.params.flatten();
  const auto names = parameter_names(fit.spec);
  const bool have = fit.cov_omega_hat.rows() == est.size();
  std::vector<SeRow> rows;
  for (Eigen::Index j = 0; j < est.size(); ++j) {
    SeRow r;
    r.parameter = names[static_cast<std::size_t>(j)];
    r.estimate = est(j);
    if (have) {
      r.se = std::sqrt(fit.cov_omega_hat(j, j));
      r.ci_lo = r.estimate - 1.96 * r.se;
      r.ci_hi = r.estimate + 1.96 * r.se;
      r.z = r.estimate / r.se;
      r.p = std::erfc(std::abs(r.z) / std::sqrt(2.0));
    } else {
      r.se = r.ci_lo = r.ci_hi = r.z = r.p = std::numeric_limits<double>::quiet_NaN();
    }
    rows.push_back(r);
  }
  return rows;
}

}  // namespace lsjm
