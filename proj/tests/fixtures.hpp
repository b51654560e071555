#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Cholesky>

#include "lsjm/model.hpp"
#include "lsjm/rng.hpp"

namespace fixtures {

using lsjm::Mat;
using lsjm::Vec;

inline double normal(lsjm::Philox4x32& rng) {
  const double u1 = lsjm::uniform_open(rng);
  const double u2 = lsjm::uniform_open(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

// X1 = [1, x, t], Z = [1], W = [1, t], V = [1], X2 = [x, u], two causes.
inline lsjm::ModelSpec small_spec(bool heterogeneous = true) {
  lsjm::ModelSpec spec;
  spec.p1 = 3;
  spec.q_b = 1;
  spec.p_w = heterogeneous ? 2 : 1;
  spec.q_omega = heterogeneous ? 1 : 0;
  spec.p2 = 2;
  spec.num_risks = 2;
  spec.variance_mode = heterogeneous ? lsjm::VarianceMode::kHeterogeneous : lsjm::VarianceMode::kHomogeneous;
  return spec;
}

inline lsjm::Params small_truth(const lsjm::ModelSpec& spec) {
  lsjm::Params p = lsjm::Params::zeros(spec);
  p.beta << 1.0, 0.5, -0.4;
  if (spec.p_w == 2) {
    p.tau << -0.3, 0.2;
  } else {
    p.tau << -0.2;
  }
  p.gamma[0] << 0.6, -0.3;
  p.gamma[1] << -0.4, 0.2;
  if (spec.q() == 2) {
    p.sigma_theta << 0.5, 0.2, 0.2, 0.4;
    p.alpha[0] << 0.8, 0.4;
    p.alpha[1] << -0.5, 0.3;
  } else {
    p.sigma_theta << 0.5;
    p.alpha[0] << 0.8;
    p.alpha[1] << -0.5;
  }
  return p;
}

struct Raw {
  std::vector<lsjm::LongitudinalRow> rows;
  std::vector<lsjm::SurvivalRecord> surv;
};

/// Small random cohort; visits every 0.5 from t=0, at most max_rows per subject.
inline Raw make_raw(const lsjm::ModelSpec& spec, int n, std::uint64_t seed, int max_rows = 6) {
  lsjm::Philox4x32 rng(seed, 77);
  const lsjm::Params truth = small_truth(spec);
  const Eigen::LLT<Mat> llt(truth.sigma_theta);
  const Mat L = llt.matrixL();
  Raw raw;
  for (int i = 0; i < n; ++i) {
    const std::string id = "s" + std::to_string(i);
    const double x = lsjm::uniform_open(rng) < 0.5 ? 1.0 : 0.0;
    const double u = 2.0 * lsjm::uniform_open(rng) - 1.0;
    Vec e(spec.q());
    for (int d = 0; d < spec.q(); ++d) e(d) = normal(rng);
    const Vec theta = L * e;
    Vec x2(2);
    x2 << x, u;
    // competing exponential event times, uniform censoring on (1, 4)
    double best = 1.0 + 3.0 * lsjm::uniform_open(rng);
    int cause = 0;
    const double base[2] = {0.25, 0.2};
    for (int k = 0; k < 2; ++k) {
      const double rate = base[k] * std::exp(x2.dot(truth.gamma[k]) + truth.alpha[k].dot(theta));
      const double t = -std::log(lsjm::uniform_open(rng)) / rate;
      if (t < best) {
        best = t;
        cause = k + 1;
      }
    }
    const double T = std::max(best, 0.05);
    raw.surv.push_back({id, T, cause, x2});
    int count = 0;
    for (double t = 0.0; t <= T && count < max_rows; t += 0.5, ++count) {
      lsjm::LongitudinalRow row;
      row.subject_id = id;
      row.time = t;
      row.x1 = Vec(3);
      row.x1 << 1.0, x, t;
      row.z = Vec::Ones(1);
      row.w = Vec(spec.p_w);
      if (spec.p_w == 2) {
        row.w << 1.0, t;
      } else {
        row.w << 1.0;
      }
      row.v = Vec::Ones(spec.q_omega);
      const double log_var = row.w.dot(truth.tau) + (spec.q_omega > 0 ? theta(1) : 0.0);
      row.y = row.x1.dot(truth.beta) + theta(0) + std::exp(0.5 * log_var) * normal(rng);
      raw.rows.push_back(std::move(row));
    }
  }
  return raw;
}

inline lsjm::Dataset make_dataset(const lsjm::ModelSpec& spec, int n, std::uint64_t seed, int max_rows = 6) {
  const Raw raw = make_raw(spec, n, seed, max_rows);
  return lsjm::validate_dataset(raw.rows, raw.surv, spec);
}

}  // namespace fixtures
