#include <doctest.h>

#include <cmath>

#include "classical_jm.hpp"
#include "fixtures.hpp"
#include "lsjm/em.hpp"
#include "lsjm/simulation.hpp"

using namespace lsjm;

namespace {

std::vector<Vec> lookup_all(const SortedCohort& cohort, const std::vector<BaselineHazard>& baselines) {
  std::vector<Vec> out;
  for (const auto& h : baselines) out.push_back(lookup_cumhaz(h, cohort));
  return out;
}

// Baselines profiled at fixed parameters by a few E-step/Breslow passes.
std::vector<BaselineHazard> profiled_baselines(const Dataset& data, const SortedCohort& cohort, const Params& params,
                                               const GaussHermiteRule& rule) {
  auto baselines = initial_values(data, cohort).baselines;
  for (int it = 0; it < 5; ++it) {
    const EStepCache cache = e_step(data, cohort, params, baselines, rule);
    baselines = update_baseline(data, cohort, cache, params);
  }
  return baselines;
}

// Cache with theta known to be zero: unit row scales, no latent moments.
EStepCache point_cache(const Dataset& data) {
  EStepCache cache;
  for (const auto& s : data.subjects) {
    PosteriorSummary p;
    p.mean = Vec::Zero(data.spec.q());
    p.second_moment = Mat::Zero(data.spec.q(), data.spec.q());
    p.row_scale = Vec::Ones(s.num_rows());
    p.row_b_scale = Mat::Zero(data.spec.q_b, s.num_rows());
    p.row_bb_scale = Mat::Zero(data.spec.q_b * data.spec.q_b, s.num_rows());
    p.risk_exp = Vec::Ones(data.spec.num_risks);
    cache.subjects.push_back(p);
  }
  return cache;
}

}  // namespace

TEST_CASE("beta update with unit weights and no latent shift is OLS") {
  const ModelSpec spec = fixtures::small_spec(false);
  Dataset data = fixtures::make_dataset(spec, 4, 4, 2);
  Params p = Params::zeros(spec);
  const EStepCache cache = point_cache(data);
  const Vec beta = update_beta(data, cache, p);

  Mat x(0, 3);
  Vec y(0);
  for (const auto& s : data.subjects) {
    x.conservativeResize(x.rows() + s.num_rows(), Eigen::NoChange);
    x.bottomRows(s.num_rows()) = s.x1;
    y.conservativeResize(y.size() + s.num_rows());
    y.tail(s.num_rows()) = s.y;
  }
  REQUIRE(x.rows() >= 5);
  REQUIRE(Eigen::FullPivLU<Mat>(x).rank() == 3);
  const Vec ols = (x.transpose() * x).inverse() * (x.transpose() * y);
  for (int j = 0; j < 3; ++j) CHECK(beta(j) == doctest::Approx(ols(j)).epsilon(1e-10));
}

TEST_CASE("beta update interpolates a constant shifted by the random intercept") {
  ModelSpec spec;
  spec.p1 = 1;
  spec.q_b = 1;
  spec.p_w = 1;
  spec.p2 = 1;
  spec.num_risks = 1;
  spec.variance_mode = VarianceMode::kHomogeneous;
  std::vector<LongitudinalRow> rows;
  for (int j = 0; j < 3; ++j) rows.push_back({"a", 0.5 * j, 3.0 + 0.7, Vec::Ones(1), Vec::Ones(1), Vec::Ones(1), Vec()});
  std::vector<SurvivalRecord> surv{{"a", 2.0, 0, Vec::Ones(1)}};
  Dataset data = validate_dataset(rows, surv, spec);
  EStepCache cache = point_cache(data);
  cache.subjects[0].row_b_scale.setConstant(0.7);
  const Vec beta = update_beta(data, cache, Params::zeros(spec));
  CHECK(beta(0) == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("collinear mean design raises SingularGram") {
  ModelSpec spec = fixtures::small_spec(false);
  Dataset data = fixtures::make_dataset(spec, 10, 5);
  for (auto& s : data.subjects) s.x1.col(2) = 2.0 * s.x1.col(0);
  try {
    update_beta(data, point_cache(data), Params::zeros(spec));
    FAIL("expected SingularGram");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kSingularGram);
  }
}

TEST_CASE("Sigma update averages posterior second moments") {
  EStepCache cache;
  cache.subjects.resize(2);
  cache.subjects[0].second_moment = Eigen::Vector2d(1.0, 3.0).asDiagonal();
  cache.subjects[1].second_moment = Eigen::Vector2d(3.0, 1.0).asDiagonal();
  const Mat s = update_sigma_theta(cache);
  CHECK(s(0, 0) == doctest::Approx(2.0));
  CHECK(s(1, 1) == doctest::Approx(2.0));
  CHECK(s(0, 1) == 0.0);

  cache.subjects[0].second_moment = Mat::Identity(2, 2);
  cache.subjects[1].second_moment = Mat::Identity(2, 2);
  CHECK(update_sigma_theta(cache).isApprox(Mat::Identity(2, 2)));

  cache.subjects[0].second_moment << 1.0, 3.0, 3.0, 1.0;
  cache.subjects[1].second_moment << 1.0, 3.0, 3.0, 1.0;
  try {
    update_sigma_theta(cache);
    FAIL("expected LostPositiveDefiniteness");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kLostPositiveDefiniteness);
  }
}

TEST_CASE("Breslow with one subject at risk gives a unit jump") {
  ModelSpec spec = fixtures::small_spec(false);
  spec.num_risks = 2;
  auto raw = fixtures::make_raw(spec, 1, 3);
  raw.surv[0].cause = 1;
  raw.surv[0].x2.setZero();
  const Dataset data = validate_dataset(raw.rows, raw.surv, spec);
  const SortedCohort cohort = SortedCohort::from_dataset(data);
  const auto b = update_baseline(data, cohort, point_cache(data), Params::zeros(spec));
  REQUIRE(b[0].size() == 1);
  CHECK(b[0].jumps[0] == 1.0);
  CHECK(b[1].empty());
  CHECK(b[1].at(100.0) == 0.0);
}

TEST_CASE("fast M-step pieces equal their naive double loops") {
  for (int n : {50, 200}) {
    const ModelSpec spec = fixtures::small_spec(true);
    const Dataset data = fixtures::make_dataset(spec, n, 100 + n);
    const SortedCohort cohort = SortedCohort::from_dataset(data);
    const Params p = fixtures::small_truth(spec);
    const auto rule = gauss_hermite_rule(6);
    const auto start = initial_values(data, cohort).baselines;
    const EStepCache cache = e_step(data, cohort, p, start, rule);
    const auto fast = update_baseline(data, cohort, cache, p);
    const auto cumhaz = lookup_all(cohort, fast);
    for (int k = 0; k < 2; ++k) {
      const auto naive = update_baseline_naive(data, cohort, cache, p, k);
      REQUIRE(naive.size() == fast[k].size());
      REQUIRE(naive.size() > 0);
      for (std::size_t j = 0; j < naive.size(); ++j) {
        CHECK(std::abs(naive.jumps[j] - fast[k].jumps[j]) <= 1e-12 * naive.jumps[j]);
        CHECK(std::abs(naive.cumulative[j] - fast[k].cumulative[j]) <= 1e-12 * naive.cumulative[j]);
      }
      const auto g = gamma_system(data, cache, cumhaz, p, k);
      const auto gn = gamma_system_naive(data, cohort, cache, fast[k], p, k);
      CHECK((g.score - gn.score).cwiseAbs().maxCoeff() <= 1e-10 * (1.0 + gn.score.cwiseAbs().maxCoeff()));
      CHECK((g.information - gn.information).cwiseAbs().maxCoeff() <=
            1e-10 * (1.0 + gn.information.cwiseAbs().maxCoeff()));
      const auto a = alpha_system(data, cache, cumhaz, p, k);
      const auto an = alpha_system_naive(data, cohort, cache, fast[k], p, k);
      CHECK((a.score - an.score).cwiseAbs().maxCoeff() <= 1e-10 * (1.0 + an.score.cwiseAbs().maxCoeff()));
      CHECK((a.information - an.information).cwiseAbs().maxCoeff() <=
            1e-10 * (1.0 + an.information.cwiseAbs().maxCoeff()));
    }
  }
}

TEST_CASE("gamma is unchanged for a cause without events") {
  const ModelSpec spec = fixtures::small_spec(true);
  auto raw = fixtures::make_raw(spec, 30, 8);
  for (auto& s : raw.surv) {
    if (s.cause == 2) s.cause = 0;
  }
  const Dataset data = validate_dataset(raw.rows, raw.surv, spec);
  const SortedCohort cohort = SortedCohort::from_dataset(data);
  const Params p = fixtures::small_truth(spec);
  const auto rule = gauss_hermite_rule(5);
  const EStepCache cache = e_step(data, cohort, p, initial_values(data, cohort).baselines, rule);
  const auto b = update_baseline(data, cohort, cache, p);
  REQUIRE(b[1].empty());
  const auto cumhaz = lookup_all(cohort, b);
  const auto sys = gamma_system(data, cache, cumhaz, p, 1);
  CHECK(sys.score.cwiseAbs().maxCoeff() == 0.0);
  CHECK(update_gamma(data, cache, cumhaz, p, 1) == p.gamma[1]);
  CHECK(update_alpha(data, cache, cumhaz, p, 1) == p.alpha[1]);
}

TEST_CASE("homogeneous tau update converges to the analytic variance MLE") {
  const ModelSpec spec = fixtures::small_spec(false);
  const Dataset data = fixtures::make_dataset(spec, 6, 21, 1);
  REQUIRE(data.num_measurements() == 6);
  const SortedCohort cohort = SortedCohort::from_dataset(data);
  Params p = fixtures::small_truth(spec);
  const auto rule = gauss_hermite_rule(8);
  const auto baselines = update_baseline(data, cohort, point_cache(data), p);
  const EStepCache cache = e_step(data, cohort, p, baselines, rule);

  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& s = data.subjects[i];
    const auto& post = cache.subjects[i];
    for (Eigen::Index j = 0; j < s.num_rows(); ++j) {
      const double r = s.y(j) - s.x1.row(j).dot(p.beta);
      total += r * r - 2.0 * r * post.mean(0) + post.second_moment(0, 0);
    }
  }
  const double analytic = std::log(total / 6.0);
  for (int it = 0; it < 50; ++it) p.tau = update_tau(data, cache, p);
  CHECK(p.tau(0) == doctest::Approx(analytic).epsilon(1e-10));
  // stationary point: no further movement
  CHECK(tau_system(data, cache, p).score.cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("every M-step block does not decrease Q at a fixed cache") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const ModelSpec spec = fixtures::small_spec(true);
    const Dataset data = fixtures::make_dataset(spec, 80, seed);
    const SortedCohort cohort = SortedCohort::from_dataset(data);
    const auto rule = gauss_hermite_rule(6);
    const InitialValues init = initial_values(data, cohort);
    Params p = init.params;
    const EStepCache cache = e_step(data, cohort, p, init.baselines, rule);
    auto tol = [](double q) { return 1e-10 * std::abs(q); };

    double q = q_function(data, cohort, cache, p, init.baselines);
    const auto baselines = update_baseline(data, cohort, cache, p);
    double next = q_function(data, cohort, cache, p, baselines);
    CHECK(next >= q - tol(q));
    q = next;
    p.beta = update_beta(data, cache, p);
    next = q_function(data, cohort, cache, p, baselines);
    CHECK(next >= q - tol(q));
    q = next;
    p.sigma_theta = update_sigma_theta(cache);
    next = q_function(data, cohort, cache, p, baselines);
    CHECK(next >= q - tol(q));
    q = next;
    p.tau = update_tau(data, cache, p);
    next = q_function(data, cohort, cache, p, baselines);
    CHECK(next >= q - tol(q));
    q = next;
    const auto cumhaz = lookup_all(cohort, baselines);
    for (int k = 0; k < 2; ++k) {
      p.gamma[k] = update_gamma(data, cache, cumhaz, p, k);
      next = q_function(data, cohort, cache, p, baselines);
      CHECK(next >= q - tol(q));
      q = next;
    }
    for (int k = 0; k < 2; ++k) {
      p.alpha[k] = update_alpha(data, cache, cumhaz, p, k);
      next = q_function(data, cohort, cache, p, baselines);
      CHECK(next >= q - tol(q));
      q = next;
    }
  }
}

TEST_CASE("observed log-likelihood is nondecreasing along the EM trace") {
  for (int n : {50, 200}) {
    ModelSpec spec = fixtures::small_spec(true);
    spec.quad_points = 6;
    spec.max_iter = 60;
    const Dataset data = fixtures::make_dataset(spec, n, 7 + n);
    FitOptions fo;
    fo.compute_se = false;
    const FitResult fr = fit(data, fo);
    for (std::size_t m = 1; m < fr.loglik_trace.size(); ++m) {
      CHECK(fr.loglik_trace[m] >= fr.loglik_trace[m - 1] - 1e-8 * std::abs(fr.loglik_trace[m - 1]));
    }
  }
}

TEST_CASE("flat survival and degenerate random effects reduce to the normal density") {
  ModelSpec spec;
  spec.p1 = 1;
  spec.q_b = 1;
  spec.p_w = 1;
  spec.p2 = 1;
  spec.num_risks = 1;
  spec.variance_mode = VarianceMode::kHomogeneous;
  std::vector<LongitudinalRow> rows;
  for (int j = 0; j < 4; ++j) rows.push_back({"a", 0.5 * j, 2.0, Vec::Ones(1), Vec::Ones(1), Vec::Ones(1), Vec()});
  std::vector<SurvivalRecord> surv{{"a", 3.0, 0, Vec::Ones(1)}};
  const Dataset data = validate_dataset(rows, surv, spec);
  const SortedCohort cohort = SortedCohort::from_dataset(data);
  Params p = Params::zeros(spec);
  p.beta << 2.0;
  p.sigma_theta << 1e-12;
  const auto baselines = update_baseline(data, cohort, point_cache(data), p);
  REQUIRE(baselines[0].empty());
  const double ll = observed_loglik(data, cohort, p, baselines, gauss_hermite_rule(10));
  CHECK(ll == doctest::Approx(-4.0 * 0.5 * std::log(2.0 * M_PI)).epsilon(1e-9));
}

TEST_CASE("homogeneous fit coincides with an independent classical joint-model EM") {
  ModelSpec spec = fixtures::small_spec(false);
  spec.quad_points = 8;
  spec.max_iter = 20000;
  spec.tol_param = 1e-11;
  spec.tol_loglik = 1e-13;
  const Dataset data = fixtures::make_dataset(spec, 120, 31);
  FitOptions fo;
  fo.compute_se = false;
  const FitResult fr = fit(data, fo);
  REQUIRE(fr.converged);
  const classical::Fit ref = classical::fit(data, 8, 20000, 1e-13);
  REQUIRE(ref.iterations < 20000);

  auto close = [](double a, double b) { return std::abs(a - b) <= 1e-6 * std::max(1.0, std::abs(b)); };
  for (int j = 0; j < 3; ++j) CHECK(close(fr.params.beta(j), ref.beta(j)));
  CHECK(close(std::exp(fr.params.tau(0)), ref.s2));
  CHECK(close(fr.params.sigma_theta(0, 0), ref.sb2));
  for (int k = 0; k < 2; ++k) {
    for (int j = 0; j < 2; ++j) CHECK(close(fr.params.gamma[k](j), ref.gamma[k](j)));
    CHECK(close(fr.params.alpha[k](0), ref.alpha[k]));
    // ascending vs descending storage
    const auto& b = fr.baselines[k];
    REQUIRE(b.size() == ref.times[k].size());
    for (std::size_t j = 0; j < b.size(); ++j) CHECK(close(b.jumps[b.size() - 1 - j], ref.jumps[k][j]));
  }
  CHECK(close(fr.loglik_trace.back(), ref.loglik));
}

TEST_CASE("large simulated cohort at the truth: Sigma update and a first step stay close") {
  SimDesign design;
  design.n = 20000;
  design.seed = 5;
  const SimulatedCohort c = simulate_cohort(design, 0);
  const Dataset& data = c.data;
  const SortedCohort cohort = SortedCohort::from_dataset(data);
  const auto rule = gauss_hermite_rule(10);
  const Params truth = design.truth();
  const auto baselines = profiled_baselines(data, cohort, truth, rule);
  const EStepCache cache = e_step(data, cohort, truth, baselines, rule);
  const Mat sigma = update_sigma_theta(cache);
  CHECK((sigma - truth.sigma_theta).norm() <= 0.1 * truth.sigma_theta.norm());

  const InitialValues next = em_iteration(data, cohort, truth, baselines, rule, 1);
  const Vec a = truth.flatten();
  const Vec b = next.params.flatten();
  CHECK((b - a).norm() <= 0.05 * a.norm());
}
