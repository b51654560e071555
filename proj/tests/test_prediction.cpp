#include <doctest.h>

#include <Eigen/Cholesky>

#include <cmath>

#include "fixtures.hpp"
#include "lsjm/em.hpp"
#include "lsjm/prediction.hpp"
#include "lsjm/rng.hpp"
#include "cif_oracle.hpp"
#include "oracles.hpp"

using namespace lsjm;

namespace {

const FitResult& toy_fit() {
  static const FitResult fr = [] {
    ModelSpec spec = fixtures::small_spec(true);
    const Dataset data = fixtures::make_dataset(spec, 300, 61);
    FitOptions fo;
    fo.compute_se = false;
    return fit(data, fo);
  }();
  return fr;
}

std::vector<BaselineHazard> random_baselines(std::uint64_t seed, int jumps, double size) {
  Philox4x32 rng(seed, 3);
  std::vector<BaselineHazard> out;
  for (int k = 0; k < 2; ++k) {
    std::vector<double> times;
    std::vector<double> sizes;
    std::vector<int> ties;
    for (int j = 0; j < jumps; ++j) {
      times.push_back(5.0 * (jumps - j) / jumps - 0.01 * k);
      sizes.push_back(size * uniform_open(rng));
      ties.push_back(1);
    }
    out.push_back(BaselineHazard::from_jumps(times, ties, sizes));
  }
  return out;
}

SubjectData history_of(const Dataset& data, std::size_t i) { return data.subjects[i]; }

}  // namespace

TEST_CASE("left-limit survival of a step hazard") {
  ModelSpec spec = fixtures::small_spec(true);
  Params p = Params::zeros(spec);
  std::vector<BaselineHazard> one{BaselineHazard::from_jumps({1.0}, {1}, {0.5})};
  p.gamma.resize(1);
  p.alpha.resize(1);
  const Vec x2 = Vec::Zero(2);
  const Vec theta = Vec::Zero(2);
  CHECK(left_limit_survival(one, p, x2, theta, 0.5) == 1.0);
  CHECK(left_limit_survival(one, p, x2, theta, 1.0) == 1.0);
  CHECK(left_limit_survival(one, p, x2, theta, 1.0 + 1e-12) == doctest::Approx(std::exp(-0.5)).epsilon(1e-15));

  const auto base = random_baselines(4, 40, 0.3);
  const Params truth = fixtures::small_truth(spec);
  Vec x(2);
  x << 1.0, -0.3;
  Vec th(2);
  th << 0.4, -0.2;
  for (double t : {0.05, 1.0, 2.5, 2.4999, 4.0, 6.0}) {
    double h = 0.0;
    for (int k = 0; k < 2; ++k) {
      double lam = 0.0;
      for (std::size_t j = 0; j < base[k].size(); ++j) {
        if (base[k].times[j] < t) lam += base[k].jumps[j];
      }
      h += lam * std::exp(x.dot(truth.gamma[k]) + truth.alpha[k].dot(th));
    }
    CHECK(left_limit_survival(base, truth, x, th, t) == doctest::Approx(std::exp(-h)).epsilon(1e-13));
  }
}

TEST_CASE("per-node CIF and survival decompose the landmark survival exactly") {
  const ModelSpec spec = fixtures::small_spec(true);
  const Params p = fixtures::small_truth(spec);
  for (double size : {0.01, 0.5, 3.0}) {
    const auto base = random_baselines(7, 60, size);
    Vec x(2);
    x << 1.0, 0.5;
    for (double b : {-2.0, 0.0, 1.5}) {
      Vec th(2);
      th << b, 0.3;
      const std::vector<double> horizons{0.5, 1.0, 2.0, 3.3, 4.99, 5.0, 9.0};
      const NodeCif n = node_cif(base, p, x, th, 0.5, horizons);
      for (std::size_t h = 0; h < horizons.size(); ++h) {
        const auto c = static_cast<Eigen::Index>(h);
        CHECK(std::abs(n.cif.col(c).sum() + n.survival(c) - 1.0) <= 1e-12);
        CHECK(n.cif.col(c).minCoeff() >= 0.0);
        if (h > 0) CHECK((n.cif.col(c) - n.cif.col(c - 1)).minCoeff() >= 0.0);
      }
      CHECK(n.cif.col(0).cwiseAbs().maxCoeff() == 0.0);  // u = s
      // S(u) / S(s) against a direct evaluation
      double hs = 0.0;
      double hu = 0.0;
      for (int k = 0; k < 2; ++k) {
        const double e = std::exp(x.dot(p.gamma[k]) + p.alpha[k].dot(th));
        hs += base[k].at(0.5) * e;
        hu += base[k].at(3.3) * e;
      }
      CHECK(n.log_survival_landmark == doctest::Approx(-hs).epsilon(1e-13));
      CHECK(n.survival(3) == doctest::Approx(std::exp(-(hu - hs))).epsilon(1e-12));
    }
  }
}

TEST_CASE("conditional CIF: bounds, monotonicity, u = s and history truncation") {
  const FitResult& fr = toy_fit();
  const ModelSpec spec = fixtures::small_spec(true);
  const Dataset data = fixtures::make_dataset(spec, 300, 61);
  int checked = 0;
  for (std::size_t i = 0; i < data.size() && checked < 20; ++i) {
    if (data.subjects[i].obs_time <= 1.2) continue;
    ++checked;
    PredictionRequest req;
    req.history = history_of(data, i);
    req.landmark = 1.0;
    req.horizons = {1.0, 1.5, 2.0, 2.5, 3.0};
    const PredictionResult r = conditional_cif(req, fr);
    CHECK(r.cif.minCoeff() >= 0.0);
    CHECK(r.cif.maxCoeff() <= 1.0);
    CHECK(r.cif.col(0).cwiseAbs().maxCoeff() == 0.0);
    for (Eigen::Index c = 1; c < r.cif.cols(); ++c) CHECK((r.cif.col(c) - r.cif.col(c - 1)).minCoeff() >= 0.0);
    CHECK(r.cif.row(0).tail(1)(0) + r.cif.row(1).tail(1)(0) <= 1.0);

    // rows after the landmark are ignored
    PredictionRequest cut = req;
    Eigen::Index rows = 0;
    while (rows < req.history.num_rows() && req.history.times(rows) <= 1.0) ++rows;
    cut.history.times = req.history.times.head(rows);
    cut.history.y = req.history.y.head(rows);
    cut.history.x1 = req.history.x1.topRows(rows);
    cut.history.z = req.history.z.topRows(rows);
    cut.history.w = req.history.w.topRows(rows);
    cut.history.v = req.history.v.topRows(rows);
    CHECK(conditional_cif(cut, fr).cif == r.cif);
  }
  CHECK(checked == 20);
}

TEST_CASE("conditional CIF matches a Monte Carlo simulation from the fitted model") {
  const FitResult& fr = toy_fit();
  const ModelSpec spec = fixtures::small_spec(true);
  const Dataset data = fixtures::make_dataset(spec, 300, 61);
  int used = 0;
  for (std::size_t i = 0; i < data.size() && used < 3; ++i) {
    if (data.subjects[i].obs_time <= 1.5) continue;
    ++used;
    for (double landmark : {1.0, 1.5}) {
      PredictionRequest req;
      req.history = history_of(data, i);
      // same history for both landmarks (tower-property check)
      Eigen::Index rows = 0;
      while (rows < req.history.num_rows() && req.history.times(rows) <= 1.0) ++rows;
      req.history.times = req.history.times.head(rows).eval();
      req.history.y = req.history.y.head(rows).eval();
      req.history.x1 = req.history.x1.topRows(rows).eval();
      req.history.z = req.history.z.topRows(rows).eval();
      req.history.w = req.history.w.topRows(rows).eval();
      req.history.v = req.history.v.topRows(rows).eval();
      req.landmark = landmark;
      req.horizons = {2.0, 3.0};
      const PredictionResult r = conditional_cif(req, fr);
      const Mat mc = oracle::monte_carlo_cif(fr, req.history, landmark, req.horizons, 1000000, 100 + i);
      INFO("subject " << i << " landmark " << landmark << "\n" << r.cif << "\nmc\n" << mc);
      MESSAGE("subject " << i << " landmark " << landmark << ": largest |CIF - MC| " << (r.cif - mc).cwiseAbs().maxCoeff());
      CHECK((r.cif - mc).cwiseAbs().maxCoeff() <= 0.005);
    }
  }
  CHECK(used == 3);
}

TEST_CASE("landmark or horizon outside the baseline support is flagged") {
  const FitResult& fr = toy_fit();
  const Dataset data = fixtures::make_dataset(fixtures::small_spec(true), 300, 61);
  double last = 0.0;
  for (const auto& b : fr.baselines) last = std::max(last, b.times.front());
  PredictionRequest req;
  req.history = data.subjects.back();
  req.landmark = last + 0.1;
  req.horizons = {last + 1.0};
  const PredictionResult r = conditional_cif(req, fr);
  CHECK(r.landmark_beyond_data);
  CHECK(r.cif.cwiseAbs().maxCoeff() == 0.0);

  req.landmark = 0.5;
  req.horizons = {1.0, last + 5.0};
  const PredictionResult r2 = conditional_cif(req, fr);
  CHECK_FALSE(r2.landmark_beyond_data);
  CHECK(r2.horizon_beyond_data);
  // constant extrapolation past the last jump
  req.horizons = {last, last + 5.0};
  const PredictionResult r3 = conditional_cif(req, fr);
  CHECK(r3.cif.col(0) == r3.cif.col(1));
}

TEST_CASE("a history starting after the landmark is rejected") {
  const FitResult& fr = toy_fit();
  const Dataset data = fixtures::make_dataset(fixtures::small_spec(true), 300, 61);
  PredictionRequest req;
  req.history = data.subjects.back();
  req.history.times.array() += 2.0;
  req.landmark = 1.0;
  req.horizons = {2.0};
  try {
    conditional_cif(req, fr);
    FAIL("expected EmptyHistory");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kEmptyHistory);
  }
}
