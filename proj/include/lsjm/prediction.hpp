#pragma once

#include <string>
#include <vector>

#include "lsjm/model.hpp"
#include "lsjm/quadrature.hpp"

namespace lsjm {

/// A new subject's history up to the landmark and the horizons to predict at.
struct PredictionRequest {
  SubjectData history;  // rows with time <= landmark; obs_time and cause are ignored
  double landmark = 0.0;
  std::vector<double> horizons;
};

struct PredictionResult {
  std::string subject_id;
  double landmark = 0.0;
  std::vector<double> horizons;
  Mat cif;  // K x horizons
  bool landmark_beyond_data = false;
  bool horizon_beyond_data = false;
};

/// Conditional survival pieces at one value of theta.
struct NodeCif {
  Mat cif;              // K x horizons: CIF_k(u, s | theta) / S(s | theta)
  Vec survival;         // S(u | theta) / S(s | theta) per horizon
  double log_survival_landmark = 0.0;  // log S(s | theta)
};

/// exp(-sum_k Lambda_k(t- | theta)).
double left_limit_survival(const std::vector<BaselineHazard>& baselines, const Params& params, const Vec& x2,
                           const Vec& theta, double t);

/**
 * Cumulative incidence over (s, u] at fixed theta. At each jump time the
 * all-cause hazard increment dH = sum_k dH_k removes the fraction
 * 1 - exp(-dH) of the survivors, split across causes in proportion to dH_k,
 * so sum_k CIF_k + S(u) = S(s) holds exactly.
 */
NodeCif node_cif(const std::vector<BaselineHazard>& baselines, const Params& params, const Vec& x2, const Vec& theta,
                 double landmark, const std::vector<double>& horizons);

PredictionResult conditional_cif(const PredictionRequest& request, const FitResult& fit);

}  // namespace lsjm
