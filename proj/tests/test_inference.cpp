#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"
#include "profile_oracle.hpp"
#include "lsjm/em.hpp"
#include "lsjm/inference.hpp"

using namespace lsjm;

using oracle::Profiled;
using oracle::profile;
using oracle::profile_loglik;

TEST_CASE("analytic subject scores match central differences of the profile log-likelihood") {
  for (bool heterogeneous : {true, false}) {
    ModelSpec spec = fixtures::small_spec(heterogeneous);
    const Dataset data = fixtures::make_dataset(spec, 16, heterogeneous ? 41 : 42);
    const SortedCohort cohort = SortedCohort::from_dataset(data);
    // The Sigma score is the derivative of the exact integral; the quadrature sum
    // only follows it closely once the omega direction is well resolved.
    const auto rule = gauss_hermite_rule(120);
    Params p = fixtures::small_truth(spec);
    const Profiled prof = profile(data, cohort, p, rule);
    const Mat scores = subject_scores(data, cohort, prof.cache, p);
    const Vec flat = p.flatten();
    const auto names = parameter_names(spec);
    for (Eigen::Index j = 0; j < flat.size(); ++j) {
      const double h = 1e-5 * std::max(1.0, std::abs(flat(j)));
      Vec up = flat;
      Vec down = flat;
      up(j) += h;
      down(j) -= h;
      const Vec fd = (profile_loglik(data, cohort, prof.cache, Params::unflatten(spec, up), rule) -
                      profile_loglik(data, cohort, prof.cache, Params::unflatten(spec, down), rule)) /
                     (2.0 * h);
      for (Eigen::Index i = 0; i < fd.size(); ++i) {
        INFO(names[static_cast<std::size_t>(j)] << " subject " << i << " analytic " << scores(i, j) << " fd "
                                                << fd(i));
        CHECK(std::abs(scores(i, j) - fd(i)) <= std::max(1e-5, 1e-4 * std::abs(fd(i))));
      }
    }
  }
}

TEST_CASE("fast survival scores equal the naive per-subject loops") {
  for (std::uint64_t seed : {3u, 4u}) {
    const ModelSpec spec = fixtures::small_spec(true);
    const Dataset data = fixtures::make_dataset(spec, 50, seed);
    const SortedCohort cohort = SortedCohort::from_dataset(data);
    const Params p = fixtures::small_truth(spec);
    const auto rule = gauss_hermite_rule(6);
    const EStepCache cache = e_step(data, cohort, p, initial_values(data, cohort).baselines, rule);
    for (int k = 0; k < 2; ++k) {
      const Mat fast = score_gamma_alpha(data, cohort, cache, p, k);
      const Mat naive = score_gamma_alpha_naive(data, cohort, cache, p, k);
      CHECK((fast - naive).cwiseAbs().maxCoeff() <= 1e-10 * (1.0 + naive.cwiseAbs().maxCoeff()));
    }
  }
}

TEST_CASE("censored subject before every event has zero survival score") {
  const ModelSpec spec = fixtures::small_spec(true);
  auto raw = fixtures::make_raw(spec, 30, 12);
  raw.surv[0].obs_time = 1e-3;
  raw.surv[0].cause = 0;
  for (auto& r : raw.rows) {
    if (r.subject_id == raw.surv[0].subject_id) r.time = 0.0;
  }
  // keep only the baseline row of that subject
  std::vector<LongitudinalRow> rows;
  bool kept = false;
  for (auto& r : raw.rows) {
    if (r.subject_id == raw.surv[0].subject_id) {
      if (kept) continue;
      kept = true;
    }
    rows.push_back(r);
  }
  const Dataset data = validate_dataset(rows, raw.surv, spec);
  REQUIRE(data.subjects[0].obs_time == 1e-3);
  const SortedCohort cohort = SortedCohort::from_dataset(data);
  const Params p = fixtures::small_truth(spec);
  const EStepCache cache = e_step(data, cohort, p, initial_values(data, cohort).baselines, gauss_hermite_rule(5));
  for (int k = 0; k < 2; ++k) {
    const Mat s = score_gamma_alpha(data, cohort, cache, p, k);
    CHECK(s.row(0).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("Sigma score vanishes when the posterior second moment equals Sigma") {
  const ModelSpec spec = fixtures::small_spec(true);
  const Dataset data = fixtures::make_dataset(spec, 1, 2);
  Params p = fixtures::small_truth(spec);
  p.sigma_theta = Mat::Identity(2, 2);
  const auto& s = data.subjects[0];
  PosteriorSummary post;
  post.second_moment = Mat::Identity(2, 2);
  post.row_scale = Vec::Ones(s.num_rows());
  post.row_b_scale = Mat::Zero(1, s.num_rows());
  post.row_bb_scale = Mat::Zero(1, s.num_rows());
  const Vec g = score_beta_tau_sigma(s, post, p);
  CHECK(g.tail(3).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("scores sum to zero at the fitted parameters and the covariance is valid") {
  ModelSpec spec = fixtures::small_spec(true);
  spec.quad_points = 8;
  spec.max_iter = 20000;
  spec.tol_param = 1e-10;
  spec.tol_loglik = 1e-13;
  const Dataset data = fixtures::make_dataset(spec, 150, 9);
  const FitResult fr = fit(data);
  REQUIRE(fr.converged);
  REQUIRE(fr.se_message.empty());

  const SortedCohort cohort = SortedCohort::from_dataset(data);
  const EStepCache cache =
      e_step(data, cohort, fr.params, fr.baselines, gauss_hermite_rule(spec.quad_points));
  const Mat scores = subject_scores(data, cohort, cache, fr.params);
  const Vec total = scores.colwise().sum().transpose();
  for (Eigen::Index j = 0; j < total.size(); ++j) {
    INFO(parameter_names(spec)[static_cast<std::size_t>(j)]);
    CHECK(std::abs(total(j)) <= 1e-5);
  }
  CHECK(total.norm() <= 1e-4 * std::sqrt(static_cast<double>(total.size())));

  const Mat& cov = fr.cov_omega_hat;
  CHECK((cov - cov.transpose()).cwiseAbs().maxCoeff() == 0.0);
  CHECK(cov.diagonal().minCoeff() > 0.0);
  for (const auto& row : se_table(fr)) {
    CHECK(row.ci_lo == doctest::Approx(row.estimate - 1.96 * row.se));
    CHECK(row.ci_hi == doctest::Approx(row.estimate + 1.96 * row.se));
    CHECK(row.p == doctest::Approx(std::erfc(std::abs(row.estimate / row.se) / std::sqrt(2.0))));
  }
}

TEST_CASE("rank-deficient score matrix raises SingularInformation naming the null direction") {
  Mat scores(5, 3);
  scores << 1, 2, 0, 2, 1, 0, 3, 3, 0, -1, 4, 0, 0.5, 0.5, 0;
  try {
    empirical_fisher_covariance(scores, {"a", "b", "c"});
    FAIL("expected SingularInformation");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kSingularInformation);
    CHECK(std::string(e.what()).find("c=") != std::string::npos);
  }
  // duplicated subjects do not add rank
  Mat dup(4, 2);
  dup << 1, 2, 1, 2, 1, 2, 1, 2;
  CHECK_THROWS_AS(empirical_fisher_covariance(dup, {"a", "b"}), Error);
}
