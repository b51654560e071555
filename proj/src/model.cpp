#include "lsjm/model.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

namespace lsjm {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kUnknownSubject: return "UnknownSubject";
    case ErrorCode::kNonIncreasingTimes: return "NonIncreasingTimes";
    case ErrorCode::kRowAfterEventTime: return "RowAfterEventTime";
    case ErrorCode::kNoLongitudinalRows: return "NoLongitudinalRows";
    case ErrorCode::kInvalidSpec: return "InvalidSpec";
    case ErrorCode::kNotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::kDegenerateDensity: return "DegenerateDensity";
    case ErrorCode::kUnsortedCohort: return "UnsortedCohort";
    case ErrorCode::kSingularGram: return "SingularGram";
    case ErrorCode::kLostPositiveDefiniteness: return "LostPositiveDefiniteness";
    case ErrorCode::kZeroDenominator: return "ZeroDenominator";
    case ErrorCode::kSingularInformation: return "SingularInformation";
    case ErrorCode::kNonFiniteLoglik: return "NonFiniteLoglik";
    case ErrorCode::kLandmarkBeyondData: return "LandmarkBeyondData";
    case ErrorCode::kEmptyHistory: return "EmptyHistory";
    case ErrorCode::kEmptyGroup: return "EmptyGroup";
    case ErrorCode::kInsufficientRiskSet: return "InsufficientRiskSet";
    case ErrorCode::kInputError: return "InputError";
  }
  return "Unknown";
}

std::string_view to_string(VarianceMode mode) {
  return mode == VarianceMode::kHeterogeneous ? "heterogeneous" : "homogeneous";
}

VarianceMode parse_variance_mode(std::string_view text) {
  if (text == "heterogeneous") return VarianceMode::kHeterogeneous;
  if (text == "homogeneous") return VarianceMode::kHomogeneous;
  throw Error(ErrorCode::kInvalidSpec, "unknown variance mode '" + std::string(text) + "'");
}

void ModelSpec::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::kInvalidSpec, msg); };
  if (p1 < 0 || q_b < 0 || p_w < 0 || q_omega < 0 || p2 < 0) fail("negative dimension");
  if (num_risks < 1) fail("need at least one risk");
  if (q() < 1) fail("total random-effect dimension must be >= 1");
  if (quad_points < 3) fail("quad_points must be >= 3");
  if (max_iter < 1) fail("max_iter must be >= 1");
  if (!(tol_param > 0.0) || !(tol_loglik > 0.0)) fail("tolerances must be positive");
  if (variance_mode == VarianceMode::kHeterogeneous && q_omega < 1) {
    fail("heterogeneous mode requires q_omega >= 1");
  }
  if (variance_mode == VarianceMode::kHomogeneous && (q_omega != 0 || p_w != 1)) {
    fail("homogeneous mode requires q_omega = 0 and an intercept-only W");
  }
}

std::size_t Dataset::num_measurements() const {
  std::size_t total = 0;
  for (const auto& s : subjects) total += static_cast<std::size_t>(s.num_rows());
  return total;
}

std::vector<double> Dataset::obs_times() const {
  std::vector<double> out;
  out.reserve(subjects.size());
  for (const auto& s : subjects) out.push_back(s.obs_time);
  return out;
}

std::vector<int> Dataset::causes() const {
  std::vector<int> out;
  out.reserve(subjects.size());
  for (const auto& s : subjects) out.push_back(s.cause);
  return out;
}

namespace {

void check_len(const Vec& v, int expected, const char* block, const std::string& id) {
  if (v.size() != expected) {
    throw Error(ErrorCode::kDimensionMismatch,
                std::string(block) + " has length " + std::to_string(v.size()) + ", expected " +
                    std::to_string(expected) + " (subject " + id + ")");
  }
}

void sort_by_time(Dataset& data) {
  std::vector<std::size_t> perm(data.subjects.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::stable_sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t b) {
    return data.subjects[a].obs_time < data.subjects[b].obs_time;
  });
  std::vector<SubjectData> subjects;
  std::vector<std::size_t> index;
  subjects.reserve(perm.size());
  index.reserve(perm.size());
  for (std::size_t p : perm) {
    subjects.push_back(std::move(data.subjects[p]));
    index.push_back(data.original_index[p]);
  }
  data.subjects = std::move(subjects);
  data.original_index = std::move(index);
}

}  // namespace

Dataset validate_dataset(std::span<const LongitudinalRow> rows, std::span<const SurvivalRecord> surv,
                         const ModelSpec& spec) {
  spec.validate();
  if (rows.empty() || surv.empty()) throw Error(ErrorCode::kInputError, "empty dataset");

  std::unordered_map<std::string, std::size_t> slot;
  slot.reserve(surv.size());
  for (std::size_t i = 0; i < surv.size(); ++i) {
    const auto& rec = surv[i];
    if (!slot.emplace(rec.subject_id, i).second) {
      throw Error(ErrorCode::kInputError, "duplicate survival record for subject " + rec.subject_id);
    }
    check_len(rec.x2, spec.p2, "x2", rec.subject_id);
    if (!(rec.obs_time > 0.0) || !std::isfinite(rec.obs_time)) {
      throw Error(ErrorCode::kInputError, "obs_time must be positive (subject " + rec.subject_id + ")");
    }
    if (rec.cause < 0 || rec.cause > spec.num_risks) {
      throw Error(ErrorCode::kInputError, "cause out of range (subject " + rec.subject_id + ")");
    }
  }

  std::vector<std::vector<std::size_t>> members(surv.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& row = rows[r];
    auto it = slot.find(row.subject_id);
    if (it == slot.end()) {
      throw Error(ErrorCode::kUnknownSubject, "longitudinal row for unknown subject " + row.subject_id);
    }
    check_len(row.x1, spec.p1, "x1", row.subject_id);
    check_len(row.z, spec.q_b, "z", row.subject_id);
    check_len(row.w, spec.p_w, "w", row.subject_id);
    check_len(row.v, spec.q_omega, "v", row.subject_id);
    if (!(row.time >= 0.0) || !std::isfinite(row.y)) {
      throw Error(ErrorCode::kInputError, "invalid time or response (subject " + row.subject_id + ")");
    }
    const auto& rec = surv[it->second];
    if (row.time > rec.obs_time) {
      throw Error(ErrorCode::kRowAfterEventTime,
                  "measurement at t=" + std::to_string(row.time) + " after obs_time " +
                      std::to_string(rec.obs_time) + " (subject " + row.subject_id + ")");
    }
    auto& m = members[it->second];
    if (!m.empty() && !(row.time > rows[m.back()].time)) {
      throw Error(ErrorCode::kNonIncreasingTimes, "subject " + row.subject_id);
    }
    m.push_back(r);
  }

  Dataset data;
  data.spec = spec;
  data.subjects.reserve(surv.size());
  data.original_index.reserve(surv.size());
  for (std::size_t i = 0; i < surv.size(); ++i) {
    const auto& rec = surv[i];
    const auto& m = members[i];
    if (m.empty()) throw Error(ErrorCode::kNoLongitudinalRows, "subject " + rec.subject_id);
    SubjectData s;
    s.id = rec.subject_id;
    const auto ni = static_cast<Eigen::Index>(m.size());
    s.times.resize(ni);
    s.y.resize(ni);
    s.x1.resize(ni, spec.p1);
    s.z.resize(ni, spec.q_b);
    s.w.resize(ni, spec.p_w);
    s.v.resize(ni, spec.q_omega);
    for (Eigen::Index j = 0; j < ni; ++j) {
      const auto& row = rows[m[static_cast<std::size_t>(j)]];
      s.times(j) = row.time;
      s.y(j) = row.y;
      s.x1.row(j) = row.x1.transpose();
      s.z.row(j) = row.z.transpose();
      s.w.row(j) = row.w.transpose();
      s.v.row(j) = row.v.transpose();
    }
    s.obs_time = rec.obs_time;
    s.cause = rec.cause;
    s.x2 = rec.x2;
    data.subjects.push_back(std::move(s));
    data.original_index.push_back(i);
  }
  sort_by_time(data);
  return data;
}

Dataset subset(const Dataset& data, std::span<const std::size_t> positions) {
  Dataset out;
  out.spec = data.spec;
  out.names = data.names;
  out.subjects.reserve(positions.size());
  out.original_index.reserve(positions.size());
  for (std::size_t p : positions) {
    out.subjects.push_back(data.subjects.at(p));
    out.original_index.push_back(data.original_index.at(p));
  }
  sort_by_time(out);
  return out;
}

Params Params::zeros(const ModelSpec& spec) {
  Params p;
  p.beta = Vec::Zero(spec.p1);
  p.tau = Vec::Zero(spec.p_w);
  p.gamma.assign(static_cast<std::size_t>(spec.num_risks), Vec::Zero(spec.p2));
  p.alpha.assign(static_cast<std::size_t>(spec.num_risks), Vec::Zero(spec.q()));
  p.sigma_theta = Mat::Zero(spec.q(), spec.q());
  return p;
}

Vec Params::flatten() const {
  const Eigen::Index q = sigma_theta.rows();
  Eigen::Index len = beta.size() + tau.size() + q * (q + 1) / 2;
  for (const auto& g : gamma) len += g.size();
  for (const auto& a : alpha) len += a.size();
  Vec out(len);
  Eigen::Index pos = 0;
  out.segment(pos, beta.size()) = beta;
  pos += beta.size();
  out.segment(pos, tau.size()) = tau;
  pos += tau.size();
  for (Eigen::Index c = 0; c < q; ++c) {
    for (Eigen::Index r = c; r < q; ++r) out(pos++) = sigma_theta(r, c);
  }
  for (const auto& g : gamma) {
    out.segment(pos, g.size()) = g;
    pos += g.size();
  }
  for (const auto& a : alpha) {
    out.segment(pos, a.size()) = a;
    pos += a.size();
  }
  return out;
}

Params Params::unflatten(const ModelSpec& spec, const Eigen::Ref<const Vec>& flat) {
  if (flat.size() != spec.num_params()) {
    throw Error(ErrorCode::kDimensionMismatch, "parameter vector length " + std::to_string(flat.size()));
  }
  Params p = zeros(spec);
  Eigen::Index pos = 0;
  p.beta = flat.segment(pos, spec.p1);
  pos += spec.p1;
  p.tau = flat.segment(pos, spec.p_w);
  pos += spec.p_w;
  const int q = spec.q();
  for (int c = 0; c < q; ++c) {
    for (int r = c; r < q; ++r) {
      p.sigma_theta(r, c) = flat(pos);
      p.sigma_theta(c, r) = flat(pos);
      ++pos;
    }
  }
  for (auto& g : p.gamma) {
    g = flat.segment(pos, spec.p2);
    pos += spec.p2;
  }
  for (auto& a : p.alpha) {
    a = flat.segment(pos, q);
    pos += q;
  }
  return p;
}

void Params::check_sigma() const {
  if (sigma_theta.rows() != sigma_theta.cols()) {
    throw Error(ErrorCode::kNotPositiveDefinite, "sigma_theta is not square");
  }
  if (!sigma_theta.isApprox(sigma_theta.transpose(), 1e-12)) {
    throw Error(ErrorCode::kNotPositiveDefinite, "sigma_theta is not symmetric");
  }
  Eigen::LLT<Mat> llt(sigma_theta);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::kNotPositiveDefinite, "Cholesky factorization of sigma_theta failed");
  }
}

namespace {

std::vector<std::string> effect_labels(const ModelSpec& spec) {
  std::vector<std::string> labels;
  for (int j = 0; j < spec.q_b; ++j) labels.push_back(spec.q_b == 1 ? "b" : "b" + std::to_string(j + 1));
  for (int j = 0; j < spec.q_omega; ++j) {
    labels.push_back(spec.q_omega == 1 ? "w" : "w" + std::to_string(j + 1));
  }
  return labels;
}

}  // namespace

std::vector<std::string> parameter_names(const ModelSpec& spec) {
  std::vector<std::string> names;
  for (int j = 0; j < spec.p1; ++j) names.push_back("beta" + std::to_string(j));
  for (int j = 0; j < spec.p_w; ++j) names.push_back("tau" + std::to_string(j));
  const auto labels = effect_labels(spec);
  for (int c = 0; c < spec.q(); ++c) {
    for (int r = c; r < spec.q(); ++r) {
      names.push_back(r == c ? "var_" + labels[r] : "cov_" + labels[c] + "_" + labels[r]);
    }
  }
  for (int k = 1; k <= spec.num_risks; ++k) {
    for (int j = 1; j <= spec.p2; ++j) names.push_back("gamma" + std::to_string(k) + std::to_string(j));
  }
  for (int k = 1; k <= spec.num_risks; ++k) {
    for (const auto& lab : labels) {
      const bool numbered = lab.size() > 1;
      names.push_back("alpha_" + lab + (numbered ? "_" : "") + std::to_string(k));
    }
  }
  return names;
}

Mat suffix_sums(const Eigen::Ref<const Mat>& values) {
  Mat out(values.rows(), values.cols());
  for (Eigen::Index c = 0; c < values.cols(); ++c) {
    double acc = 0.0;
    for (Eigen::Index j = values.rows() - 1; j >= 0; --j) {
      acc = j == values.rows() - 1 ? values(j, c) : values(j, c) + acc;
      out(j, c) = acc;
    }
  }
  return out;
}

BaselineHazard BaselineHazard::from_jumps(std::vector<double> times_desc, std::vector<int> ties,
                                          std::vector<double> jumps) {
  BaselineHazard h;
  h.times = std::move(times_desc);
  h.ties = std::move(ties);
  h.jumps = std::move(jumps);
  if (h.times.size() != h.jumps.size() || h.times.size() != h.ties.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "baseline times/jumps/ties differ in length");
  }
  const Mat cum = suffix_sums(Eigen::Map<const Vec>(h.jumps.data(), static_cast<Eigen::Index>(h.jumps.size())));
  h.cumulative.assign(cum.data(), cum.data() + cum.size());
  return h;
}

double BaselineHazard::at(double t) const {
  auto it = std::partition_point(times.begin(), times.end(), [t](double x) { return x > t; });
  return it == times.end() ? 0.0 : cumulative[static_cast<std::size_t>(it - times.begin())];
}

double BaselineHazard::left_limit(double t) const {
  auto it = std::partition_point(times.begin(), times.end(), [t](double x) { return x >= t; });
  return it == times.end() ? 0.0 : cumulative[static_cast<std::size_t>(it - times.begin())];
}

}  // namespace lsjm
