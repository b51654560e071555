#pragma once

// Reference computations written directly from the model definition, sharing
// no code with the library beyond the data containers.

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <vector>

#include "lsjm/model.hpp"

namespace oracle {

using lsjm::Mat;
using lsjm::Vec;

/// log f(Y | theta) + log f(T, D | theta) by explicit loops.
inline double log_joint_density(const lsjm::SubjectData& s, const lsjm::Params& p, const std::vector<double>& cumhaz,
                                double jump, const Vec& theta) {
  const int qb = static_cast<int>(s.z.cols());
  const int qw = static_cast<int>(s.v.cols());
  double total = 0.0;
  for (int j = 0; j < s.y.size(); ++j) {
    double mean = 0.0;
    for (int c = 0; c < s.x1.cols(); ++c) mean += s.x1(j, c) * p.beta(c);
    for (int c = 0; c < qb; ++c) mean += s.z(j, c) * theta(c);
    double log_var = 0.0;
    for (int c = 0; c < s.w.cols(); ++c) log_var += s.w(j, c) * p.tau(c);
    for (int c = 0; c < qw; ++c) log_var += s.v(j, c) * theta(qb + c);
    const double var = std::exp(log_var);
    const double r = s.y(j) - mean;
    total += -0.5 * std::log(2.0 * std::numbers::pi * var) - 0.5 * r * r / var;
  }
  for (std::size_t k = 0; k < cumhaz.size(); ++k) {
    double eta = 0.0;
    for (int c = 0; c < s.x2.size(); ++c) eta += s.x2(c) * p.gamma[k](c);
    for (int c = 0; c < theta.size(); ++c) eta += p.alpha[k](c) * theta(c);
    total -= cumhaz[k] * std::exp(eta);
    if (s.cause == static_cast<int>(k) + 1) total += std::log(jump) + eta;
  }
  return total;
}

/// log N(theta; 0, Sigma) for a 2x2 Sigma.
inline double log_normal2(const Mat& sigma, double t1, double t2) {
  const double det = sigma(0, 0) * sigma(1, 1) - sigma(0, 1) * sigma(1, 0);
  const double a = sigma(1, 1) / det;
  const double b = -sigma(0, 1) / det;
  const double c = sigma(0, 0) / det;
  const double quad = a * t1 * t1 + 2.0 * b * t1 * t2 + c * t2 * t2;
  return -std::log(2.0 * std::numbers::pi) - 0.5 * std::log(det) - 0.5 * quad;
}

/**
 * Adaptive nested Gauss-Kronrod over R^2 of h(theta) * exp(logf(theta) - shift).
 * The shift is the maximum of logf over a coarse grid so the integrand peaks near 1.
 */
class Integrator2D {
 public:
  explicit Integrator2D(std::function<double(double, double)> logf, double radius = 8.0)
      : logf_(std::move(logf)) {
    shift_ = -std::numeric_limits<double>::infinity();
    const int m = 200;
    for (int a = 0; a <= m; ++a) {
      for (int b = 0; b <= m; ++b) {
        const double t1 = -radius + 2.0 * radius * a / m;
        const double t2 = -radius + 2.0 * radius * b / m;
        shift_ = std::max(shift_, logf_(t1, t2));
      }
    }
  }

  double shift() const { return shift_; }

  double integrate(const std::function<double(double, double)>& h) const {
    using boost::math::quadrature::gauss_kronrod;
    const double inf = std::numeric_limits<double>::infinity();
    auto outer = [&](double t1) {
      auto inner = [&](double t2) {
        // far tails can evaluate to inf - inf; the integrand vanishes there
        const double lf = logf_(t1, t2);
        if (!std::isfinite(lf)) return 0.0;
        const double e = std::exp(lf - shift_);
        return e == 0.0 ? 0.0 : h(t1, t2) * e;
      };
      return gauss_kronrod<double, 61>::integrate(inner, -inf, inf, 15, 1e-13);
    };
    return gauss_kronrod<double, 61>::integrate(outer, -inf, inf, 15, 1e-13);
  }

 private:
  std::function<double(double, double)> logf_;
  double shift_;
};

/// Same for one random effect.
inline double integrate1d(const std::function<double(double)>& f) {
  using boost::math::quadrature::gauss_kronrod;
  const double inf = std::numeric_limits<double>::infinity();
  return gauss_kronrod<double, 61>::integrate(f, -inf, inf, 15, 1e-13);
}

/**
 * Largest relative deviation of the library's posterior summary for subject `s`
 * (q = 2) from adaptive integration. Log-marginal errors are relative to its
 * magnitude; moments of theta are relative to the posterior RMS of theta;
 * exponential moments are relative to the matching E[exp(.)] term.
 */
template <class Summary>
double worst_posterior_error(const lsjm::SubjectData& s, const lsjm::Params& p, const std::vector<double>& cumhaz,
                             double jump, const Summary& post) {
  auto logf = [&](double b, double w) {
    Vec th(2);
    th << b, w;
    return log_joint_density(s, p, cumhaz, jump, th) + log_normal2(p.sigma_theta, b, w);
  };
  const Integrator2D integ(logf);
  const double denom = integ.integrate([](double, double) { return 1.0; });
  auto expect = [&](const std::function<double(double, double)>& h) { return integ.integrate(h) / denom; };
  auto rel = [](double a, double b, double scale) { return std::abs(a - b) / std::max(std::abs(b), scale); };

  const double log_marginal = integ.shift() + std::log(denom);
  double worst = rel(post.log_marginal, log_marginal, 1e-300);
  const double bb = expect([](double b, double) { return b * b; });
  const double bw = expect([](double b, double w) { return b * w; });
  const double ww = expect([](double, double w) { return w * w; });
  const double rms = std::sqrt(bb + ww);
  worst = std::max(worst, rel(post.mean(0), expect([](double b, double) { return b; }), rms));
  worst = std::max(worst, rel(post.mean(1), expect([](double, double w) { return w; }), rms));
  worst = std::max(worst, rel(post.second_moment(0, 0), bb, rms * rms));
  worst = std::max(worst, rel(post.second_moment(0, 1), bw, rms * rms));
  worst = std::max(worst, rel(post.second_moment(1, 1), ww, rms * rms));
  for (int j = 0; j < s.y.size(); ++j) {
    const double v = s.v(j, 0);
    const double e = expect([&](double, double w) { return std::exp(-v * w); });
    const double be = expect([&](double b, double w) { return b * std::exp(-v * w); });
    const double bbe = expect([&](double b, double w) { return b * b * std::exp(-v * w); });
    worst = std::max(worst, rel(post.row_scale(j), e, e));
    worst = std::max(worst, rel(post.row_b_scale(0, j), be, e * rms));
    worst = std::max(worst, rel(post.row_bb_scale(0, j), bbe, e * rms * rms));
  }
  for (std::size_t k = 0; k < cumhaz.size(); ++k) {
    const double a0 = p.alpha[k](0);
    const double a1 = p.alpha[k](1);
    const double e = expect([&](double b, double w) { return std::exp(a0 * b + a1 * w); });
    const double be = expect([&](double b, double w) { return b * std::exp(a0 * b + a1 * w); });
    const double we = expect([&](double b, double w) { return w * std::exp(a0 * b + a1 * w); });
    const double bwe = expect([&](double b, double w) { return b * w * std::exp(a0 * b + a1 * w); });
    const auto kk = static_cast<Eigen::Index>(k);
    worst = std::max(worst, rel(post.risk_exp(kk), e, e));
    worst = std::max(worst, rel(post.risk_theta_exp(0, kk), be, e * rms));
    worst = std::max(worst, rel(post.risk_theta_exp(1, kk), we, e * rms));
    worst = std::max(worst, rel(post.risk_theta2_exp(1, kk), bwe, e * rms * rms));
  }
  return worst;
}

}  // namespace oracle
