#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lsjm/inference.hpp"
#include "lsjm/model.hpp"
#include "lsjm/prediction.hpp"
#include "lsjm/riskset.hpp"
#include "lsjm/simulation.hpp"

namespace lsjm {

/// Name of the pseudo-column that reads as the constant 1.
inline constexpr const char* kInterceptColumn = "(Intercept)";

/// Version tag written into (and required from) fit artifacts.
inline constexpr const char* kArtifactVersion = "lsjm-fit/1";

/**
 * Column names for both input files. Design blocks list covariate columns in
 * order; a block may reference the time column or the intercept pseudo-column.
 * Defaults match the files written by `simulate`.
 */
struct ColumnMap {
  std::string id = "id";
  std::string time = "time";
  std::string y = "y";
  std::string obs_time = "obs_time";
  std::string status = "status";
  std::vector<std::string> x1{kInterceptColumn, "X1", "X2", "X3", "time"};
  std::vector<std::string> z{kInterceptColumn};
  std::vector<std::string> w{kInterceptColumn, "X1", "X2", "X3", "time"};
  std::vector<std::string> v{kInterceptColumn};
  std::vector<std::string> x2{"X1", "X2", "X3"};

  /// Homogeneous mode keeps x1, z and x2 and replaces W by the intercept, V by nothing.
  ColumnMap for_mode(VarianceMode mode) const;
};

struct RunConfig {
  std::filesystem::path longitudinal_csv;
  std::filesystem::path survival_csv;
  ColumnMap columns;
  ModelSpec spec;  // dimensions are filled from `columns` when the data are loaded
  int num_risks = 0;  // 0: largest status in the survival file
  std::filesystem::path out_dir = ".";
  std::uint64_t seed = 1;
  int threads = 0;  // 0: all available cores

  SimDesign design;
  int reps = 100;
  MapeOptions crossval;
  int crossval_runs = 1;

  std::filesystem::path model;  // fit artifact for predict
  double landmark = 3.0;
  std::vector<double> horizons{4.0, 6.0, 8.0};

  std::vector<int> bench_sizes{2000, 20000};
  bool bench_naive = true;

  int thread_count() const;
};

RunConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path);

/// Header plus string cells. Line numbers in errors are 1-based file lines.
struct CsvTable {
  std::filesystem::path path;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> cells;
  std::vector<std::size_t> lines;

  /// Index of `name` in the header; throws kInputError naming the file and column.
  std::size_t column(const std::string& name) const;
  double number(std::size_t row, std::size_t col) const;
};

CsvTable read_csv(const std::filesystem::path& path);

struct RawData {
  std::vector<LongitudinalRow> rows;
  std::vector<SurvivalRecord> surv;
  DesignNames names;
  ModelSpec spec;
};

/// Reads both CSVs through the column map and sizes the spec from it.
RawData read_inputs(const RunConfig& config);
Dataset load_dataset(const RunConfig& config);

/// Histories for prediction: longitudinal rows plus x2 from the survival file
/// (obs_time and status are not needed). Subjects keep survival-file order.
std::vector<SubjectData> load_histories(const RunConfig& config, const ColumnMap& columns);

void write_text(const std::filesystem::path& path, const std::string& text);

/// Longitudinal and survival CSVs in the default column layout.
void write_simulated(const SimulatedCohort& cohort, const std::filesystem::path& longitudinal,
                     const std::filesystem::path& survival);

std::string format_double(double x);
std::string se_csv(const std::vector<SeRow>& rows);
std::string loglik_csv(const std::vector<double>& trace);
std::string prediction_csv(const std::vector<PredictionResult>& results);
std::string bench_csv(const std::vector<BenchRow>& rows);

struct LoadedFit {
  FitResult fit;
  ColumnMap columns;
};

nlohmann::json fit_to_json(const FitResult& fit, const ColumnMap& columns);
LoadedFit fit_from_json(const nlohmann::json& doc);
void save_fit(const std::filesystem::path& path, const FitResult& fit, const ColumnMap& columns);
LoadedFit load_fit(const std::filesystem::path& path);

}  // namespace lsjm
