#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lsjm/model.hpp"

namespace lsjm {

/**
 * Data-generating design of the simulation study. Longitudinal mean and log
 * variance both use [1, X1, X2, X3, t]; the hazards use (X1, X2, X3) and the
 * shared (b, omega). Defaults are the study's true values.
 */
struct SimDesign {
  int n = 800;
  Vec beta = (Vec(5) << 5.0, 1.5, 2.0, 1.0, 2.0).finished();
  Vec tau = (Vec(5) << 0.5, 0.5, -0.2, 0.2, 0.05).finished();
  std::vector<Vec> gamma{(Vec(3) << 1.0, 0.5, 0.5).finished(), (Vec(3) << -0.5, 0.5, 0.25).finished()};
  std::vector<Vec> alpha{(Vec(2) << 1.0, 0.5).finished(), (Vec(2) << -1.0, -0.5).finished()};
  double var_b = 0.5;
  double var_omega = 0.5;
  double rho = 0.5;
  std::vector<double> lambda0{0.05, 0.1};
  double censor_lo = 4.0;
  double censor_hi = 8.0;
  double visit_step = 0.25;
  double x3_mean = 1.0;
  double x3_sd = 2.0;  // N(1, 4) read as variance 4
  std::uint64_t seed = 1;

  Mat sigma_theta() const;
  Params truth() const;
};

/// Spec of the model fitted to simulated data in either variance mode.
ModelSpec simulation_model_spec(VarianceMode mode);
DesignNames simulation_design_names(VarianceMode mode);

struct SimulatedCohort {
  std::vector<LongitudinalRow> rows;
  std::vector<SurvivalRecord> surv;
  Mat covariates;  // n x 3 (X1, X2, X3), survival-record order
  Mat theta;       // n x 2 true (b, omega)
  Dataset data;    // heterogeneous layout
};

/// One cohort from substream `stream` of the design seed.
SimulatedCohort simulate_cohort(const SimDesign& design, std::uint64_t stream);

/// Drops the variance covariates and omega: W = intercept, q_omega = 0.
Dataset to_homogeneous(const Dataset& data);

struct McOptions {
  int reps = 100;
  std::vector<VarianceMode> configs{VarianceMode::kHeterogeneous, VarianceMode::kHomogeneous};
  int threads = 1;
  int quad_points = 10;
  int max_iter = 500;
  // called from worker threads
  std::function<void(int rep, VarianceMode mode, const FitResult&)> on_fit;
};

struct McParameterRow {
  std::string config;
  std::string parameter;
  double truth = 0.0;  // NaN when the parameter has no true counterpart
  double bias = 0.0;
  double se = 0.0;
  double est_se = 0.0;
  double cp = 0.0;  // percent
  int used = 0;     // replicates with an estimate and a finite SE
};

struct McConfigSummary {
  std::string config;
  int reps = 0;
  int failures = 0;
  int not_converged = 0;
  int se_missing = 0;
  std::vector<std::string> failure_messages;
  std::vector<std::string> names;
  Mat estimates;  // reps x params, NaN rows for failed fits
  Mat ses;
  std::vector<int> converged;
};

struct McReport {
  SimDesign design;
  std::vector<McConfigSummary> configs;
  std::vector<McParameterRow> rows;
};

McReport monte_carlo_study(const SimDesign& design, const McOptions& options);
std::string format_mc_table(const McReport& report);
std::string mc_csv(const McReport& report);

/// Aalen-Johansen style cumulative incidence over (s, u] for subjects with T > s.
double empirical_cif(std::span<const double> times, std::span<const int> causes, double landmark, double horizon,
                     int risk);

struct MapeOptions {
  int folds = 4;
  double landmark = 3.0;
  std::vector<double> horizons{4.0, 6.0, 8.0};
  std::vector<VarianceMode> configs{VarianceMode::kHeterogeneous, VarianceMode::kHomogeneous};
  int threads = 1;
  int quad_points = 10;
  int max_iter = 500;
  std::uint64_t seed = 1;
};

struct MapeRow {
  std::string config;
  int risk = 0;
  double horizon = 0.0;
  double mape = 0.0;
};

/// Fold assignment: seeded shuffle, contiguous blocks of floor(n/L), remainder round-robin.
std::vector<int> assign_folds(std::size_t n, int folds, std::uint64_t seed);

/// Quartile-group MAPE for one validation set: predicted[k][i] against the data of `times`/`causes`.
double quartile_mape(std::span<const double> predicted, std::span<const double> times, std::span<const int> causes,
                     double landmark, double horizon, int risk);

/// Cross-validated MAPE; `data` must use the heterogeneous simulation layout when both configs are requested.
std::vector<MapeRow> mape_cv(const Dataset& data, const MapeOptions& options);
std::string mape_csv(const std::vector<MapeRow>& rows);

}  // namespace lsjm
