#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "lsjm/error.hpp"

namespace lsjm {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

enum class VarianceMode { kHeterogeneous, kHomogeneous };

std::string_view to_string(VarianceMode mode);
VarianceMode parse_variance_mode(std::string_view text);

/**
 * Dimension bookkeeping and fitting controls.
 *
 *   p1       columns of the mean design X1
 *   q_b      random effects in the mean (Z)
 *   p_w      columns of the log-variance design W
 *   q_omega  random effects in the log-variance (V)
 *   p2       time-fixed survival covariates X2
 *
 * Homogeneous mode is the classical joint model: q_omega = 0 and W is a single
 * intercept column, so the residual variance is exp(tau_0).
 */
struct ModelSpec {
  int p1 = 0;
  int q_b = 0;
  int p_w = 0;
  int q_omega = 0;
  int p2 = 0;
  int num_risks = 1;
  int quad_points = 10;
  int max_iter = 500;
  double tol_param = 1e-4;
  double tol_loglik = 1e-6;
  VarianceMode variance_mode = VarianceMode::kHeterogeneous;

  int q() const { return q_b + q_omega; }
  int num_sigma_params() const { return q() * (q() + 1) / 2; }
  /// Length of the parametric vector (beta, tau, vech(Sigma), gamma_k..., alpha_k...).
  int num_params() const { return p1 + p_w + num_sigma_params() + num_risks * (p2 + q()); }

  void validate() const;
};

struct LongitudinalRow {
  std::string subject_id;
  double time = 0.0;
  double y = 0.0;
  Vec x1;
  Vec z;
  Vec w;
  Vec v;
};

struct SurvivalRecord {
  std::string subject_id;
  double obs_time = 0.0;
  int cause = 0;  // 0 = censored
  Vec x2;
};

/// One subject: measurement rows stacked as matrix rows, plus the survival outcome.
struct SubjectData {
  std::string id;
  Vec times;
  Vec y;
  Mat x1;
  Mat z;
  Mat w;
  Mat v;
  double obs_time = 0.0;
  int cause = 0;
  Vec x2;

  Eigen::Index num_rows() const { return y.size(); }
};

struct DesignNames {
  std::vector<std::string> x1;
  std::vector<std::string> z;
  std::vector<std::string> w;
  std::vector<std::string> v;
  std::vector<std::string> x2;
};

/**
 * A validated cohort. Subjects are stored ascending by observation time
 * (stable with respect to the survival-record input order);
 * `original_index[i]` is the position of subject i in that input.
 */
struct Dataset {
  ModelSpec spec;
  std::vector<SubjectData> subjects;
  std::vector<std::size_t> original_index;
  DesignNames names;

  std::size_t size() const { return subjects.size(); }
  std::size_t num_measurements() const;
  std::vector<double> obs_times() const;
  std::vector<int> causes() const;
};

Dataset validate_dataset(std::span<const LongitudinalRow> rows, std::span<const SurvivalRecord> surv,
                         const ModelSpec& spec);

/// Subset by dataset position (keeps spec and names, re-sorts defensively).
Dataset subset(const Dataset& data, std::span<const std::size_t> positions);

/// Parametric component of the model.
struct Params {
  Vec beta;
  Vec tau;
  std::vector<Vec> gamma;  // per risk, length p2
  std::vector<Vec> alpha;  // per risk, length q: (alpha_b, alpha_omega)
  Mat sigma_theta;

  static Params zeros(const ModelSpec& spec);

  Vec alpha_b(int k, const ModelSpec& spec) const { return alpha[k].head(spec.q_b); }
  Vec alpha_omega(int k, const ModelSpec& spec) const { return alpha[k].tail(spec.q_omega); }

  /// beta, tau, vech(Sigma) (column-major lower triangle), gamma_1..K, alpha_1..K.
  Vec flatten() const;
  static Params unflatten(const ModelSpec& spec, const Eigen::Ref<const Vec>& flat);

  /// Throws NotPositiveDefinite unless sigma_theta is symmetric with a Cholesky factor.
  void check_sigma() const;
};

std::vector<std::string> parameter_names(const ModelSpec& spec);

/**
 * Right-continuous step function for one cause: jumps at the distinct event
 * times, stored in descending time order. cumulative[j] is the hazard
 * accumulated over all jumps at times <= times[j].
 */
struct BaselineHazard {
  std::vector<double> times;
  std::vector<double> jumps;
  std::vector<int> ties;
  std::vector<double> cumulative;

  static BaselineHazard from_jumps(std::vector<double> times_desc, std::vector<int> ties,
                                   std::vector<double> jumps);

  std::size_t size() const { return times.size(); }
  bool empty() const { return times.empty(); }
  double at(double t) const;
  double left_limit(double t) const;
};

/// out[j] = sum_{l >= j} values[l]; rows are event slots in descending time order.
Mat suffix_sums(const Eigen::Ref<const Mat>& values);

struct FitResult {
  ModelSpec spec;
  DesignNames names;
  Params params;
  std::vector<BaselineHazard> baselines;
  std::vector<double> loglik_trace;
  int n_iter = 0;
  bool converged = false;
  std::vector<std::string> subject_ids;
  Mat posterior_means;  // n x q, dataset order
  Mat cov_omega_hat;    // empty when the information matrix could not be inverted
  std::string se_message;
  double em_seconds = 0.0;
  double se_seconds = 0.0;
};

}  // namespace lsjm
