#include "lsjm/prediction.hpp"

#include <algorithm>
#include <cmath>

namespace lsjm {

namespace {

double linear_predictor(const Params& params, const Vec& x2, const Vec& theta, std::size_t k) {
  return x2.dot(params.gamma[k]) + params.alpha[k].dot(theta);
}

}  // namespace

double left_limit_survival(const std::vector<BaselineHazard>& baselines, const Params& params, const Vec& x2,
                           const Vec& theta, double t) {
  double h = 0.0;
  for (std::size_t k = 0; k < baselines.size(); ++k) {
    h += baselines[k].left_limit(t) * std::exp(linear_predictor(params, x2, theta, k));
  }
  return std::exp(-h);
}

NodeCif node_cif(const std::vector<BaselineHazard>& baselines, const Params& params, const Vec& x2, const Vec& theta,
                 double landmark, const std::vector<double>& horizons) {
  const std::size_t num_risks = baselines.size();
  std::vector<double> scale(num_risks);
  double log_surv = 0.0;
  for (std::size_t k = 0; k < num_risks; ++k) {
    scale[k] = std::exp(linear_predictor(params, x2, theta, k));
    log_surv -= baselines[k].at(landmark) * scale[k];
  }

  // jump times of every cause in (landmark, max horizon], ascending, merged
  const double last = horizons.empty() ? landmark : *std::max_element(horizons.begin(), horizons.end());
  struct Jump {
    double time;
    std::size_t risk;
    double size;
  };
  std::vector<Jump> jumps;
  for (std::size_t k = 0; k < num_risks; ++k) {
    const auto& h = baselines[k];
    for (std::size_t j = 0; j < h.size(); ++j) {
      if (h.times[j] > landmark && h.times[j] <= last) jumps.push_back({h.times[j], k, h.jumps[j] * scale[k]});
    }
  }
  std::sort(jumps.begin(), jumps.end(), [](const Jump& a, const Jump& b) {
    return a.time < b.time || (a.time == b.time && a.risk < b.risk);
  });

  std::vector<std::size_t> order(horizons.size());
  for (std::size_t h = 0; h < order.size(); ++h) order[h] = h;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return horizons[a] < horizons[b]; });

  NodeCif out;
  out.cif = Mat::Zero(static_cast<Eigen::Index>(num_risks), static_cast<Eigen::Index>(horizons.size()));
  out.survival = Vec::Ones(static_cast<Eigen::Index>(horizons.size()));
  out.log_survival_landmark = log_surv;
  std::vector<double> cif(num_risks, 0.0);
  std::vector<double> dh(num_risks, 0.0);
  double surv = 1.0;
  std::size_t next = 0;
  std::size_t pos = 0;
  auto record_until = [&](double t) {
    while (next < order.size() && horizons[order[next]] < t) {
      const auto col = static_cast<Eigen::Index>(order[next]);
      for (std::size_t k = 0; k < num_risks; ++k) out.cif(static_cast<Eigen::Index>(k), col) = cif[k];
      out.survival(col) = surv;
      ++next;
    }
  };
  while (pos < jumps.size()) {
    const double t = jumps[pos].time;
    record_until(t);
    std::fill(dh.begin(), dh.end(), 0.0);
    double total = 0.0;
    for (; pos < jumps.size() && jumps[pos].time == t; ++pos) {
      dh[jumps[pos].risk] += jumps[pos].size;
      total += jumps[pos].size;
    }
    if (total > 0.0) {
      const double dead = surv * -std::expm1(-total);
      for (std::size_t k = 0; k < num_risks; ++k) cif[k] += dead * (dh[k] / total);
      surv *= std::exp(-total);
    }
  }
  record_until(std::numeric_limits<double>::infinity());
  return out;
}

PredictionResult conditional_cif(const PredictionRequest& request, const FitResult& fit) {
  const double s = request.landmark;
  if (!(s >= 0.0)) throw Error(ErrorCode::kInputError, "landmark must be nonnegative");
  for (double u : request.horizons) {
    if (u < s) throw Error(ErrorCode::kInputError, "horizon before landmark");
  }
  // history truncated at the landmark
  const SubjectData& full = request.history;
  Eigen::Index rows = 0;
  while (rows < full.num_rows() && full.times(rows) <= s) ++rows;
  if (rows == 0) throw Error(ErrorCode::kEmptyHistory, "no measurements at or before the landmark for " + full.id);

  PredictionResult result;
  result.subject_id = full.id;
  result.landmark = s;
  result.horizons = request.horizons;
  const auto num_risks = static_cast<Eigen::Index>(fit.baselines.size());
  result.cif = Mat::Zero(num_risks, static_cast<Eigen::Index>(request.horizons.size()));

  double last_jump = 0.0;
  for (const auto& h : fit.baselines) {
    if (!h.empty()) last_jump = std::max(last_jump, h.times.front());
  }
  if (s > last_jump) {
    result.landmark_beyond_data = true;
    return result;
  }
  for (double u : request.horizons) result.horizon_beyond_data = result.horizon_beyond_data || u > last_jump;

  const QuadGrid grid = rescale_grid(gauss_hermite_rule(fit.spec.quad_points), fit.params.sigma_theta);
  Vec logw = grid.log_weights + longitudinal_log_density(full, rows, fit.params, grid);
  std::vector<NodeCif> nodes(static_cast<std::size_t>(grid.size()));
  for (Eigen::Index t = 0; t < grid.size(); ++t) {
    nodes[static_cast<std::size_t>(t)] =
        node_cif(fit.baselines, fit.params, full.x2, grid.nodes.col(t), s, request.horizons);
    logw(t) += nodes[static_cast<std::size_t>(t)].log_survival_landmark;
  }
  const double shift = logw.maxCoeff();
  if (!std::isfinite(shift)) throw Error(ErrorCode::kDegenerateDensity, "prediction weights vanished for " + full.id);
  Vec w = (logw.array() - shift).exp();
  w /= w.sum();
  for (Eigen::Index t = 0; t < grid.size(); ++t) result.cif += w(t) * nodes[static_cast<std::size_t>(t)].cif;
  result.cif = result.cif.cwiseMax(0.0).cwiseMin(1.0);
  return result;
}

}  // namespace lsjm
