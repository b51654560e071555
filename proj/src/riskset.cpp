#include "lsjm/riskset.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "lsjm/rng.hpp"

namespace lsjm {

namespace {

void bump(ScanCounter* counter, std::uint64_t n = 1) {
  if (counter != nullptr) counter->visits += n;
}

void require_descending(const std::vector<double>& times) {
  for (std::size_t j = 1; j < times.size(); ++j) {
    if (!(times[j] < times[j - 1])) {
      throw Error(ErrorCode::kUnsortedCohort, "baseline jump times are not strictly descending");
    }
  }
}

// For subject i (input order): the first slot j, scanning from the largest time
// down, with times_desc[j] <= T_i; -1 if none.
std::vector<int> step_slots(const SortedCohort& cohort, const std::vector<double>& times_desc, ScanCounter* counter) {
  std::vector<int> slot(cohort.size(), -1);
  if (times_desc.empty()) {
    bump(counter, cohort.size());
    return slot;
  }
  const auto& sorted = cohort.sorted_times();
  const auto& order = cohort.order();
  const std::size_t last = times_desc.size() - 1;
  // Merge of the two descending sequences; each step either advances j or
  // settles one subject. Branch-free so cost does not depend on the tie pattern.
  std::size_t pos = cohort.size();
  std::size_t j = 0;
  std::uint64_t steps = 0;
  while (pos > 0) {
    const bool advance = (j <= last) & (times_desc[std::min(j, last)] > sorted[pos - 1]);
    slot[order[pos - 1]] = j <= last ? static_cast<int>(j) : -1;
    j += advance;
    pos -= !advance;
    ++steps;
  }
  bump(counter, steps);
  return slot;
}

// Row i of the result is values.row(slot[i]), zero where slot[i] < 0.
Mat map_step_to_subjects(const SortedCohort& cohort, const std::vector<double>& times_desc,
                         const Eigen::Ref<const Mat>& values, ScanCounter* counter) {
  const std::vector<int> slot = step_slots(cohort, times_desc, counter);
  const auto n = static_cast<Eigen::Index>(cohort.size());
  Mat out(n, values.cols());
  for (Eigen::Index c = 0; c < values.cols(); ++c) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const int j = slot[static_cast<std::size_t>(i)];
      out(i, c) = j < 0 ? 0.0 : values(j, c);
    }
  }
  return out;
}

void check_risk(const SortedCohort& cohort, int k) {
  if (k < 0 || k >= cohort.num_risks()) throw Error(ErrorCode::kInvalidSpec, "risk index out of range");
}

}  // namespace

SortedCohort SortedCohort::build(std::span<const double> obs_times, std::span<const int> causes, int num_risks) {
  if (obs_times.size() != causes.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "obs_times and causes differ in length");
  }
  if (num_risks < 1) throw Error(ErrorCode::kInvalidSpec, "num_risks must be >= 1");
  SortedCohort c;
  const std::size_t n = obs_times.size();
  c.order_.resize(n);
  std::iota(c.order_.begin(), c.order_.end(), std::size_t{0});
  std::stable_sort(c.order_.begin(), c.order_.end(),
                   [&](std::size_t a, std::size_t b) { return obs_times[a] < obs_times[b]; });
  c.sorted_times_.resize(n);
  for (std::size_t p = 0; p < n; ++p) c.sorted_times_[p] = obs_times[c.order_[p]];
  c.causes_.assign(causes.begin(), causes.end());
  c.slot_.assign(n, -1);
  c.event_times_.assign(static_cast<std::size_t>(num_risks), {});
  c.ties_.assign(static_cast<std::size_t>(num_risks), {});

  for (std::size_t p = n; p-- > 0;) {
    const std::size_t i = c.order_[p];
    const int d = causes[i];
    if (d < 0 || d > num_risks) throw Error(ErrorCode::kInvalidSpec, "cause outside 0..K");
    if (d == 0) continue;
    auto& times = c.event_times_[static_cast<std::size_t>(d - 1)];
    auto& ties = c.ties_[static_cast<std::size_t>(d - 1)];
    if (times.empty() || times.back() != obs_times[i]) {
      times.push_back(obs_times[i]);
      ties.push_back(0);
    }
    ++ties.back();
    c.slot_[i] = static_cast<int>(times.size()) - 1;
  }
  return c;
}

SortedCohort SortedCohort::from_dataset(const Dataset& data) {
  const auto times = data.obs_times();
  const auto causes = data.causes();
  return build(times, causes, data.spec.num_risks);
}

Vec lookup_cumhaz(const BaselineHazard& baseline, const SortedCohort& cohort, ScanCounter* counter) {
  require_descending(baseline.times);
  const std::vector<int> slot = step_slots(cohort, baseline.times, counter);
  Vec out(static_cast<Eigen::Index>(cohort.size()));
  for (std::size_t i = 0; i < slot.size(); ++i) {
    out(static_cast<Eigen::Index>(i)) = slot[i] < 0 ? 0.0 : baseline.cumulative[static_cast<std::size_t>(slot[i])];
  }
  return out;
}

Vec lookup_cumhaz_naive(const BaselineHazard& baseline, const SortedCohort& cohort, ScanCounter* counter) {
  require_descending(baseline.times);
  const std::size_t n = cohort.size();
  Vec out = Vec::Zero(static_cast<Eigen::Index>(n));
  for (std::size_t p = 0; p < n; ++p) {
    const double t = cohort.sorted_times()[p];
    int best = -1;
    for (std::size_t j = 0; j < baseline.size(); ++j) {
      bump(counter);
      if (baseline.times[j] <= t && (best < 0 || baseline.times[j] > baseline.times[static_cast<std::size_t>(best)])) {
        best = static_cast<int>(j);
      }
    }
    if (best >= 0) out(static_cast<Eigen::Index>(cohort.order()[p])) = baseline.cumulative[static_cast<std::size_t>(best)];
  }
  return out;
}

Mat riskset_sums(const SortedCohort& cohort, int k, const Eigen::Ref<const Mat>& values, ScanCounter* counter) {
  check_risk(cohort, k);
  if (values.rows() != static_cast<Eigen::Index>(cohort.size())) {
    throw Error(ErrorCode::kDimensionMismatch, "riskset_sums: one row per subject expected");
  }
  const auto& times = cohort.event_times(k);
  const auto& sorted = cohort.sorted_times();
  const auto& order = cohort.order();
  // start[j]: first sorted position with T >= times[j]; subjects are added largest-T first
  std::vector<std::size_t> start(times.size());
  std::size_t pos = cohort.size();
  std::size_t j = 0;
  std::uint64_t steps = 0;
  while (j < times.size()) {
    const bool take = (pos > 0) & (sorted[pos > 0 ? pos - 1 : 0] >= times[j]);
    start[j] = pos;
    pos -= take;
    j += !take;
    ++steps;
  }
  bump(counter, steps);
  Mat out(static_cast<Eigen::Index>(times.size()), values.cols());
  if (times.empty()) return out;
  // suffix sums over sorted positions, read off at each start
  const std::size_t first = start.back();
  std::vector<double> suffix(cohort.size() - first + 1);
  for (Eigen::Index c = 0; c < values.cols(); ++c) {
    double acc = 0.0;
    suffix.back() = 0.0;
    for (std::size_t p = cohort.size(); p > first; --p) {
      acc += values(static_cast<Eigen::Index>(order[p - 1]), c);
      suffix[p - 1 - first] = acc;
    }
    for (std::size_t jj = 0; jj < times.size(); ++jj) out(static_cast<Eigen::Index>(jj), c) = suffix[start[jj] - first];
  }
  return out;
}

Mat riskset_sums_naive(const SortedCohort& cohort, int k, const Eigen::Ref<const Mat>& values, ScanCounter* counter) {
  check_risk(cohort, k);
  if (values.rows() != static_cast<Eigen::Index>(cohort.size())) {
    throw Error(ErrorCode::kDimensionMismatch, "riskset_sums: one row per subject expected");
  }
  const auto& times = cohort.event_times(k);
  Mat out = Mat::Zero(static_cast<Eigen::Index>(times.size()), values.cols());
  for (std::size_t j = 0; j < times.size(); ++j) {
    for (std::size_t p = 0; p < cohort.size(); ++p) {
      bump(counter);
      if (cohort.sorted_times()[p] >= times[j]) {
        out.row(static_cast<Eigen::Index>(j)) += values.row(static_cast<Eigen::Index>(cohort.order()[p]));
      }
    }
  }
  return out;
}

Mat prefix_score_scan(const SortedCohort& cohort, int k, const Eigen::Ref<const Mat>& per_event, ScanCounter* counter) {
  check_risk(cohort, k);
  const auto& times = cohort.event_times(k);
  if (per_event.rows() != static_cast<Eigen::Index>(times.size())) {
    throw Error(ErrorCode::kDimensionMismatch, "prefix_score_scan: one row per event time expected");
  }
  const Mat cumulative = suffix_sums(per_event);
  bump(counter, times.size());
  return map_step_to_subjects(cohort, times, cumulative, counter);
}

Mat prefix_score_scan_naive(const SortedCohort& cohort, int k, const Eigen::Ref<const Mat>& per_event,
                            ScanCounter* counter) {
  check_risk(cohort, k);
  const auto& times = cohort.event_times(k);
  if (per_event.rows() != static_cast<Eigen::Index>(times.size())) {
    throw Error(ErrorCode::kDimensionMismatch, "prefix_score_scan: one row per event time expected");
  }
  const std::size_t n = cohort.size();
  Mat out = Mat::Zero(static_cast<Eigen::Index>(n), per_event.cols());
  for (std::size_t p = 0; p < n; ++p) {
    const auto i = static_cast<Eigen::Index>(cohort.order()[p]);
    for (std::size_t j = times.size(); j-- > 0;) {
      bump(counter);
      if (times[j] <= cohort.sorted_times()[p]) out.row(i) += per_event.row(static_cast<Eigen::Index>(j));
    }
  }
  return out;
}

std::vector<BenchRow> benchmark_kernels(std::span<const int> sizes, std::uint64_t seed, bool include_naive) {
  using Clock = std::chrono::steady_clock;
  std::vector<BenchRow> rows;
  for (const int n : sizes) {
    Philox4x32 rng(seed, static_cast<std::uint64_t>(n));
    std::vector<double> times(static_cast<std::size_t>(n));
    std::vector<int> causes(static_cast<std::size_t>(n));
    Mat values(n, 4);
    for (int i = 0; i < n; ++i) {
      times[static_cast<std::size_t>(i)] = -std::log(uniform_open(rng));
      const double u = uniform_open(rng);
      causes[static_cast<std::size_t>(i)] = u < 0.25 ? 0 : (u < 0.65 ? 1 : 2);
      for (int c = 0; c < 4; ++c) values(i, c) = uniform_open(rng) - 0.5;
    }
    // datasets are stored ascending by observation time, so the engine sees this layout
    std::sort(times.begin(), times.end());
    const SortedCohort cohort = SortedCohort::build(times, causes, 2);
    const auto q = static_cast<Eigen::Index>(cohort.num_events(0));
    std::vector<double> jumps(static_cast<std::size_t>(q));
    for (auto& v : jumps) v = uniform_open(rng) / static_cast<double>(n);
    const BaselineHazard baseline = BaselineHazard::from_jumps(cohort.event_times(0), cohort.ties(0), jumps);
    const Mat per_event = values.topRows(q);

    // best of several repeats, more of them for cheap calls; the counter is taken from a single call
    auto time_it = [&](const std::string& name, auto&& kernel, double work) {
      const int repeats = static_cast<int>(std::clamp(4e7 / work, 2.0, 1000.0));
      ScanCounter counter;
      std::int64_t best = -1;
      for (int r = 0; r < repeats; ++r) {
        ScanCounter local;
        const auto start = Clock::now();
        kernel(&local);
        const auto ns = std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - start).count();
        if (best < 0 || ns < best) best = ns;
        counter = local;
      }
      rows.push_back({n, name, best, counter.visits});
    };
    time_it("lookup_cumhaz", [&](ScanCounter* c) { (void)lookup_cumhaz(baseline, cohort, c); }, n);
    time_it("riskset_sums", [&](ScanCounter* c) { (void)riskset_sums(cohort, 0, values, c); }, n);
    time_it("prefix_score_scan", [&](ScanCounter* c) { (void)prefix_score_scan(cohort, 0, per_event, c); }, n);
    if (include_naive) {
      const double quadratic = static_cast<double>(n) * static_cast<double>(q);
      time_it("lookup_cumhaz_naive", [&](ScanCounter* c) { (void)lookup_cumhaz_naive(baseline, cohort, c); }, quadratic);
      time_it("riskset_sums_naive", [&](ScanCounter* c) { (void)riskset_sums_naive(cohort, 0, values, c); }, quadratic);
      time_it("prefix_score_scan_naive",
              [&](ScanCounter* c) { (void)prefix_score_scan_naive(cohort, 0, per_event, c); }, quadratic);
    }
  }
  return rows;
}

}  // namespace lsjm
