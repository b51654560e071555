#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lsjm/model.hpp"

namespace lsjm {

/// Counts summand visits so tests can check the O(n + q_k) vs O(n q_k) work.
struct ScanCounter {
  std::uint64_t visits = 0;
};

/**
 * Observation times sorted ascending (stable), plus, per cause, the distinct
 * uncensored event times in descending order with their tie counts.
 */
class SortedCohort {
 public:
  static SortedCohort build(std::span<const double> obs_times, std::span<const int> causes, int num_risks);
  static SortedCohort from_dataset(const Dataset& data);

  std::size_t size() const { return sorted_times_.size(); }
  int num_risks() const { return static_cast<int>(event_times_.size()); }

  /// sorted position -> input index
  const std::vector<std::size_t>& order() const { return order_; }
  const std::vector<double>& sorted_times() const { return sorted_times_; }

  const std::vector<double>& event_times(int k) const { return event_times_.at(static_cast<std::size_t>(k)); }
  const std::vector<int>& ties(int k) const { return ties_.at(static_cast<std::size_t>(k)); }
  std::size_t num_events(int k) const { return event_times(k).size(); }

  /// Slot of subject i's own event time in event_times(cause-1), or -1 when censored.
  int event_slot(std::size_t i) const { return slot_[i]; }
  int cause(std::size_t i) const { return causes_[i]; }

 private:
  std::vector<std::size_t> order_;
  std::vector<double> sorted_times_;
  std::vector<int> causes_;
  std::vector<int> slot_;
  std::vector<std::vector<double>> event_times_;
  std::vector<std::vector<int>> ties_;
};

/// Lambda_0k(T_i) for every subject (input order) by a single merged scan.
Vec lookup_cumhaz(const BaselineHazard& baseline, const SortedCohort& cohort, ScanCounter* counter = nullptr);

/// Row j: sum over r in R(t_kj) of values.row(r); values is n x d in input order.
Mat riskset_sums(const SortedCohort& cohort, int k, const Eigen::Ref<const Mat>& values,
                 ScanCounter* counter = nullptr);

/// Row i: sum over event slots with t_kj <= T_i of per_event.row(j); per_event is q_k x d.
Mat prefix_score_scan(const SortedCohort& cohort, int k, const Eigen::Ref<const Mat>& per_event,
                      ScanCounter* counter = nullptr);

// Quadratic reference implementations with the same contracts.
Vec lookup_cumhaz_naive(const BaselineHazard& baseline, const SortedCohort& cohort, ScanCounter* counter = nullptr);
Mat riskset_sums_naive(const SortedCohort& cohort, int k, const Eigen::Ref<const Mat>& values,
                       ScanCounter* counter = nullptr);
Mat prefix_score_scan_naive(const SortedCohort& cohort, int k, const Eigen::Ref<const Mat>& per_event,
                            ScanCounter* counter = nullptr);

struct BenchRow {
  int n = 0;
  std::string kernel;
  std::int64_t wall_ns = 0;
  std::uint64_t summand_visits = 0;
};

/// Times every kernel (fast and naive) on random two-cause cohorts of each size.
std::vector<BenchRow> benchmark_kernels(std::span<const int> sizes, std::uint64_t seed,
                                        bool include_naive = true);

}  // namespace lsjm
