#include "lsjm/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "lsjm/parallel.hpp"

namespace lsjm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::size_t kConstant = std::numeric_limits<std::size_t>::max();

[[noreturn]] void input_error(const std::string& what) { throw Error(ErrorCode::kInputError, what); }

template <typename T>
void take(const json& table, const char* key, T& out, const std::string& where) {
  if (!table.contains(key)) return;
  try {
    out = table.at(key).get<T>();
  } catch (const json::exception& e) {
    input_error("config " + where + "." + key + ": " + e.what());
  }
}

void check_keys(const json& table, const std::set<std::string>& allowed, const std::string& where) {
  if (!table.is_object()) input_error("config " + where + " must be a table");
  for (const auto& item : table.items()) {
    if (!allowed.count(item.key())) input_error("unknown config key " + where + "." + item.key());
  }
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cell += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cell += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(std::move(cell));
      cell.clear();
    } else {
      cell += ch;
    }
  }
  out.push_back(std::move(cell));
  return out;
}

std::string quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + '"';
}

std::vector<std::size_t> block_columns(const CsvTable& t, const std::vector<std::string>& names,
                                       const std::string& block) {
  std::set<std::string> seen;
  std::vector<std::size_t> out;
  for (const auto& name : names) {
    if (!seen.insert(name).second) {
      input_error("column '" + name + "' mapped twice in block " + block + " of " + t.path.string());
    }
    out.push_back(name == kInterceptColumn ? kConstant : t.column(name));
  }
  return out;
}

Vec block_values(const CsvTable& t, std::size_t row, const std::vector<std::size_t>& cols) {
  Vec out(static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    out(static_cast<Eigen::Index>(j)) = cols[j] == kConstant ? 1.0 : t.number(row, cols[j]);
  }
  return out;
}

struct LongitudinalColumns {
  std::size_t id, time, y;
  std::vector<std::size_t> x1, z, w, v;
};

LongitudinalColumns longitudinal_columns(const CsvTable& t, const ColumnMap& c) {
  return {t.column(c.id), t.column(c.time), t.column(c.y), block_columns(t, c.x1, "x1"),
          block_columns(t, c.z, "z"), block_columns(t, c.w, "w"), block_columns(t, c.v, "v")};
}

LongitudinalRow longitudinal_row(const CsvTable& t, std::size_t r, const LongitudinalColumns& c) {
  LongitudinalRow row;
  row.subject_id = t.cells[r][c.id];
  row.time = t.number(r, c.time);
  row.y = t.number(r, c.y);
  row.x1 = block_values(t, r, c.x1);
  row.z = block_values(t, r, c.z);
  row.w = block_values(t, r, c.w);
  row.v = block_values(t, r, c.v);
  return row;
}

json matrix_json(const Mat& m) {
  json out = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    out.push_back(std::move(row));
  }
  return out;
}

Mat json_matrix(const json& doc, Eigen::Index cols) {
  Mat m(static_cast<Eigen::Index>(doc.size()), cols);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const auto& row = doc.at(static_cast<std::size_t>(i));
    if (static_cast<Eigen::Index>(row.size()) != cols) input_error("artifact matrix row has the wrong length");
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = row.at(static_cast<std::size_t>(j)).get<double>();
  }
  return m;
}

json vec_json(const Vec& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

Vec json_vec(const json& doc) {
  const auto v = doc.get<std::vector<double>>();
  return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json columns_json(const ColumnMap& c) {
  return {{"id", c.id}, {"time", c.time}, {"y", c.y}, {"obs_time", c.obs_time}, {"status", c.status},
          {"x1", c.x1}, {"z", c.z}, {"w", c.w}, {"v", c.v}, {"x2", c.x2}};
}

ColumnMap parse_columns(const json& t, ColumnMap c) {
  check_keys(t, {"id", "time", "y", "obs_time", "status", "x1", "z", "w", "v", "x2"}, "columns");
  take(t, "id", c.id, "columns");
  take(t, "time", c.time, "columns");
  take(t, "y", c.y, "columns");
  take(t, "obs_time", c.obs_time, "columns");
  take(t, "status", c.status, "columns");
  take(t, "x1", c.x1, "columns");
  take(t, "z", c.z, "columns");
  take(t, "w", c.w, "columns");
  take(t, "v", c.v, "columns");
  take(t, "x2", c.x2, "columns");
  return c;
}

}  // namespace

ColumnMap ColumnMap::for_mode(VarianceMode mode) const {
  ColumnMap out = *this;
  if (mode == VarianceMode::kHomogeneous) {
    out.w = {kInterceptColumn};
    out.v.clear();
  }
  return out;
}

int RunConfig::thread_count() const { return threads > 0 ? threads : default_thread_count(); }

RunConfig parse_config(const json& doc, const fs::path& base_dir) {
  RunConfig c;
  check_keys(doc,
             {"longitudinal", "survival", "columns", "model", "out", "seed", "threads", "simulation", "mc",
              "crossval", "predict", "bench"},
             "");
  std::string path;
  if (doc.contains("longitudinal")) {
    take(doc, "longitudinal", path, "");
    c.longitudinal_csv = resolve(base_dir, path);
  }
  if (doc.contains("survival")) {
    take(doc, "survival", path, "");
    c.survival_csv = resolve(base_dir, path);
  }
  if (doc.contains("out")) {
    take(doc, "out", path, "");
    c.out_dir = resolve(base_dir, path);
  }
  take(doc, "seed", c.seed, "");
  take(doc, "threads", c.threads, "");
  if (doc.contains("columns")) c.columns = parse_columns(doc.at("columns"), c.columns);

  if (doc.contains("model")) {
    const json& t = doc.at("model");
    check_keys(t, {"num_risks", "quad_points", "max_iter", "tol_param", "tol_loglik", "variance_mode"}, "model");
    take(t, "num_risks", c.num_risks, "model");
    take(t, "quad_points", c.spec.quad_points, "model");
    take(t, "max_iter", c.spec.max_iter, "model");
    take(t, "tol_param", c.spec.tol_param, "model");
    take(t, "tol_loglik", c.spec.tol_loglik, "model");
    std::string mode;
    take(t, "variance_mode", mode, "model");
    if (!mode.empty()) c.spec.variance_mode = parse_variance_mode(mode);
  }
  if (doc.contains("simulation")) {
    const json& t = doc.at("simulation");
    check_keys(t, {"n", "rho", "var_b", "var_omega", "lambda0", "censor_lo", "censor_hi", "visit_step"},
               "simulation");
    take(t, "n", c.design.n, "simulation");
    take(t, "rho", c.design.rho, "simulation");
    take(t, "var_b", c.design.var_b, "simulation");
    take(t, "var_omega", c.design.var_omega, "simulation");
    take(t, "lambda0", c.design.lambda0, "simulation");
    take(t, "censor_lo", c.design.censor_lo, "simulation");
    take(t, "censor_hi", c.design.censor_hi, "simulation");
    take(t, "visit_step", c.design.visit_step, "simulation");
  }
  if (doc.contains("mc")) {
    check_keys(doc.at("mc"), {"reps"}, "mc");
    take(doc.at("mc"), "reps", c.reps, "mc");
  }
  if (doc.contains("crossval")) {
    const json& t = doc.at("crossval");
    check_keys(t, {"folds", "landmark", "horizons", "runs"}, "crossval");
    take(t, "folds", c.crossval.folds, "crossval");
    take(t, "landmark", c.crossval.landmark, "crossval");
    take(t, "horizons", c.crossval.horizons, "crossval");
    take(t, "runs", c.crossval_runs, "crossval");
  }
  if (doc.contains("predict")) {
    const json& t = doc.at("predict");
    check_keys(t, {"model", "landmark", "horizons"}, "predict");
    if (t.contains("model")) {
      take(t, "model", path, "predict");
      c.model = resolve(base_dir, path);
    }
    take(t, "landmark", c.landmark, "predict");
    take(t, "horizons", c.horizons, "predict");
  }
  if (doc.contains("bench")) {
    check_keys(doc.at("bench"), {"sizes", "naive"}, "bench");
    take(doc.at("bench"), "sizes", c.bench_sizes, "bench");
    take(doc.at("bench"), "naive", c.bench_naive, "bench");
  }
  return c;
}

RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) input_error("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    input_error("config " + path.string() + ": " + e.what());
  }
  return parse_config(doc, path.parent_path());
}

std::size_t CsvTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) input_error(path.string() + ": column '" + name + "' not found in header");
  return static_cast<std::size_t>(it - header.begin());
}

double CsvTable::number(std::size_t row, std::size_t col) const {
  const std::string& s = cells[row][col];
  double x = 0.0;
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
  if (ec != std::errc() || end != s.data() + s.size() || !std::isfinite(x)) {
    input_error(path.string() + ":" + std::to_string(lines[row]) + ": column '" + header[col] + "': '" + s +
                "' is not a finite number");
  }
  return x;
}

CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) input_error("cannot open " + path.string());
  CsvTable t;
  t.path = path;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    if (line.empty()) continue;
    auto cells = split_line(line);
    if (t.header.empty()) {
      t.header = std::move(cells);
      continue;
    }
    if (cells.size() != t.header.size()) {
      input_error(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(t.header.size()) +
                  " fields, found " + std::to_string(cells.size()));
    }
    t.cells.push_back(std::move(cells));
    t.lines.push_back(line_no);
  }
  if (t.header.empty()) input_error(path.string() + ": missing header row");
  return t;
}

RawData read_inputs(const RunConfig& config) {
  if (config.longitudinal_csv.empty()) input_error("no longitudinal CSV given");
  if (config.survival_csv.empty()) input_error("no survival CSV given");
  const ColumnMap cols = config.columns.for_mode(config.spec.variance_mode);
  const CsvTable lt = read_csv(config.longitudinal_csv);
  const CsvTable st = read_csv(config.survival_csv);

  RawData out;
  const LongitudinalColumns lc = longitudinal_columns(lt, cols);
  for (std::size_t r = 0; r < lt.cells.size(); ++r) out.rows.push_back(longitudinal_row(lt, r, lc));

  const std::size_t sid = st.column(cols.id);
  const std::size_t stime = st.column(cols.obs_time);
  const std::size_t sstatus = st.column(cols.status);
  const auto sx2 = block_columns(st, cols.x2, "x2");
  int max_status = 0;
  for (std::size_t r = 0; r < st.cells.size(); ++r) {
    SurvivalRecord rec;
    rec.subject_id = st.cells[r][sid];
    rec.obs_time = st.number(r, stime);
    const double status = st.number(r, sstatus);
    if (status < 0 || status != std::floor(status)) {
      input_error(st.path.string() + ":" + std::to_string(st.lines[r]) + ": column '" + cols.status +
                  "': status must be a nonnegative integer");
    }
    rec.cause = static_cast<int>(status);
    max_status = std::max(max_status, rec.cause);
    rec.x2 = block_values(st, r, sx2);
    out.surv.push_back(std::move(rec));
  }

  out.spec = config.spec;
  out.spec.p1 = static_cast<int>(cols.x1.size());
  out.spec.q_b = static_cast<int>(cols.z.size());
  out.spec.p_w = static_cast<int>(cols.w.size());
  out.spec.q_omega = static_cast<int>(cols.v.size());
  out.spec.p2 = static_cast<int>(cols.x2.size());
  out.spec.num_risks = config.num_risks > 0 ? config.num_risks : std::max(max_status, 1);
  out.names = {cols.x1, cols.z, cols.w, cols.v, cols.x2};
  return out;
}

Dataset load_dataset(const RunConfig& config) {
  const RawData raw = read_inputs(config);
  Dataset data = validate_dataset(raw.rows, raw.surv, raw.spec);
  data.names = raw.names;
  return data;
}

std::vector<SubjectData> load_histories(const RunConfig& config, const ColumnMap& cols) {
  if (config.longitudinal_csv.empty()) input_error("no longitudinal CSV given");
  if (config.survival_csv.empty()) input_error("no survival CSV given");
  const CsvTable lt = read_csv(config.longitudinal_csv);
  const CsvTable st = read_csv(config.survival_csv);
  const LongitudinalColumns lc = longitudinal_columns(lt, cols);
  std::map<std::string, std::vector<LongitudinalRow>> by_id;
  for (std::size_t r = 0; r < lt.cells.size(); ++r) {
    LongitudinalRow row = longitudinal_row(lt, r, lc);
    by_id[row.subject_id].push_back(std::move(row));
  }
  const std::size_t sid = st.column(cols.id);
  const auto sx2 = block_columns(st, cols.x2, "x2");
  std::vector<SubjectData> out;
  for (std::size_t r = 0; r < st.cells.size(); ++r) {
    SubjectData s;
    s.id = st.cells[r][sid];
    s.x2 = block_values(st, r, sx2);
    auto& rows = by_id[s.id];
    std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.time < b.time; });
    const auto m = static_cast<Eigen::Index>(rows.size());
    s.times.resize(m);
    s.y.resize(m);
    s.x1.resize(m, static_cast<Eigen::Index>(cols.x1.size()));
    s.z.resize(m, static_cast<Eigen::Index>(cols.z.size()));
    s.w.resize(m, static_cast<Eigen::Index>(cols.w.size()));
    s.v.resize(m, static_cast<Eigen::Index>(cols.v.size()));
    for (Eigen::Index j = 0; j < m; ++j) {
      const auto& row = rows[static_cast<std::size_t>(j)];
      s.times(j) = row.time;
      s.y(j) = row.y;
      s.x1.row(j) = row.x1.transpose();
      s.z.row(j) = row.z.transpose();
      s.w.row(j) = row.w.transpose();
      s.v.row(j) = row.v.transpose();
    }
    out.push_back(std::move(s));
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) input_error("cannot write " + path.string());
  out << text;
  if (!out) input_error("write failed for " + path.string());
}

std::string format_double(double x) {
  if (std::isnan(x)) return "NA";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

void write_simulated(const SimulatedCohort& cohort, const fs::path& longitudinal, const fs::path& survival) {
  std::map<std::string, Eigen::Index> index;
  for (std::size_t i = 0; i < cohort.surv.size(); ++i) {
    index[cohort.surv[i].subject_id] = static_cast<Eigen::Index>(i);
  }
  std::ostringstream lo;
  lo << "id,time,y,X1,X2,X3\n";
  for (const auto& r : cohort.rows) {
    const Eigen::Index i = index.at(r.subject_id);
    lo << quote(r.subject_id) << ',' << format_double(r.time) << ',' << format_double(r.y);
    for (Eigen::Index j = 0; j < 3; ++j) lo << ',' << format_double(cohort.covariates(i, j));
    lo << '\n';
  }
  std::ostringstream so;
  so << "id,obs_time,status,X1,X2,X3\n";
  for (std::size_t i = 0; i < cohort.surv.size(); ++i) {
    const auto& s = cohort.surv[i];
    so << quote(s.subject_id) << ',' << format_double(s.obs_time) << ',' << s.cause;
    for (Eigen::Index j = 0; j < 3; ++j) so << ',' << format_double(cohort.covariates(static_cast<Eigen::Index>(i), j));
    so << '\n';
  }
  write_text(longitudinal, lo.str());
  write_text(survival, so.str());
}

std::string se_csv(const std::vector<SeRow>& rows) {
  std::ostringstream out;
  out << "parameter,estimate,se,ci_lo,ci_hi,z,p\n";
  for (const auto& r : rows) {
    out << quote(r.parameter) << ',' << format_double(r.estimate) << ',' << format_double(r.se) << ','
        << format_double(r.ci_lo) << ',' << format_double(r.ci_hi) << ',' << format_double(r.z) << ','
        << format_double(r.p) << '\n';
  }
  return out.str();
}

std::string loglik_csv(const std::vector<double>& trace) {
  std::ostringstream out;
  out << "iteration,loglik\n";
  for (std::size_t i = 0; i < trace.size(); ++i) out << i << ',' << format_double(trace[i]) << '\n';
  return out.str();
}

std::string prediction_csv(const std::vector<PredictionResult>& results) {
  std::ostringstream out;
  out << "subject_id,risk,s,u,cif\n";
  for (const auto& r : results) {
    for (Eigen::Index k = 0; k < r.cif.rows(); ++k) {
      for (std::size_t h = 0; h < r.horizons.size(); ++h) {
        out << quote(r.subject_id) << ',' << k + 1 << ',' << format_double(r.landmark) << ','
            << format_double(r.horizons[h]) << ',' << format_double(r.cif(k, static_cast<Eigen::Index>(h))) << '\n';
      }
    }
  }
  return out.str();
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream out;
  out << "n,kernel,wall_ns,summand_visits\n";
  for (const auto& r : rows) out << r.n << ',' << r.kernel << ',' << r.wall_ns << ',' << r.summand_visits << '\n';
  return out.str();
}

json fit_to_json(const FitResult& fit, const ColumnMap& columns) {
  const ModelSpec& s = fit.spec;
  json doc;
  doc["version"] = kArtifactVersion;
  doc["spec"] = {{"p1", s.p1},
                 {"q_b", s.q_b},
                 {"p_w", s.p_w},
                 {"q_omega", s.q_omega},
                 {"p2", s.p2},
                 {"num_risks", s.num_risks},
                 {"quad_points", s.quad_points},
                 {"max_iter", s.max_iter},
                 {"tol_param", s.tol_param},
                 {"tol_loglik", s.tol_loglik},
                 {"variance_mode", std::string(to_string(s.variance_mode))}};
  doc["names"] = {{"x1", fit.names.x1}, {"z", fit.names.z}, {"w", fit.names.w}, {"v", fit.names.v},
                  {"x2", fit.names.x2}};
  doc["columns"] = columns_json(columns);
  json gamma = json::array();
  json alpha = json::array();
  for (int k = 0; k < s.num_risks; ++k) {
    gamma.push_back(vec_json(fit.params.gamma[static_cast<std::size_t>(k)]));
    alpha.push_back(vec_json(fit.params.alpha[static_cast<std::size_t>(k)]));
  }
  doc["params"] = {{"beta", vec_json(fit.params.beta)},
                   {"tau", vec_json(fit.params.tau)},
                   {"sigma_theta", matrix_json(fit.params.sigma_theta)},
                   {"gamma", gamma},
                   {"alpha", alpha}};
  json estimates = json::array();
  const auto names = parameter_names(s);
  const Vec flat = fit.params.flatten();
  for (std::size_t j = 0; j < names.size(); ++j) {
    estimates.push_back({{"parameter", names[j]}, {"estimate", flat(static_cast<Eigen::Index>(j))}});
  }
  doc["estimates"] = estimates;
  json baselines = json::array();
  for (const auto& b : fit.baselines) baselines.push_back({{"times", b.times}, {"ties", b.ties}, {"jumps", b.jumps}});
  doc["baselines"] = baselines;
  doc["covariance"] = fit.cov_omega_hat.size() == 0 ? json(nullptr) : matrix_json(fit.cov_omega_hat);
  doc["se_message"] = fit.se_message;
  doc["converged"] = fit.converged;
  doc["n_iter"] = fit.n_iter;
  doc["loglik_trace"] = fit.loglik_trace;
  doc["subject_ids"] = fit.subject_ids;
  doc["posterior_means"] = matrix_json(fit.posterior_means);
  doc["em_seconds"] = fit.em_seconds;
  doc["se_seconds"] = fit.se_seconds;
  return doc;
}

LoadedFit fit_from_json(const json& doc) {
  LoadedFit out;
  try {
    if (doc.value("version", std::string()) != kArtifactVersion) {
      input_error("fit artifact version is not " + std::string(kArtifactVersion));
    }
    FitResult& fit = out.fit;
    const json& s = doc.at("spec");
    fit.spec.p1 = s.at("p1").get<int>();
    fit.spec.q_b = s.at("q_b").get<int>();
    fit.spec.p_w = s.at("p_w").get<int>();
    fit.spec.q_omega = s.at("q_omega").get<int>();
    fit.spec.p2 = s.at("p2").get<int>();
    fit.spec.num_risks = s.at("num_risks").get<int>();
    fit.spec.quad_points = s.at("quad_points").get<int>();
    fit.spec.max_iter = s.at("max_iter").get<int>();
    fit.spec.tol_param = s.at("tol_param").get<double>();
    fit.spec.tol_loglik = s.at("tol_loglik").get<double>();
    fit.spec.variance_mode = parse_variance_mode(s.at("variance_mode").get<std::string>());
    fit.spec.validate();

    const json& n = doc.at("names");
    fit.names = {n.at("x1").get<std::vector<std::string>>(), n.at("z").get<std::vector<std::string>>(),
                 n.at("w").get<std::vector<std::string>>(), n.at("v").get<std::vector<std::string>>(),
                 n.at("x2").get<std::vector<std::string>>()};
    out.columns = parse_columns(doc.at("columns"), ColumnMap{});

    const json& p = doc.at("params");
    fit.params.beta = json_vec(p.at("beta"));
    fit.params.tau = json_vec(p.at("tau"));
    fit.params.sigma_theta = json_matrix(p.at("sigma_theta"), fit.spec.q());
    for (const auto& g : p.at("gamma")) fit.params.gamma.push_back(json_vec(g));
    for (const auto& a : p.at("alpha")) fit.params.alpha.push_back(json_vec(a));
    if (fit.params.beta.size() != fit.spec.p1 || fit.params.tau.size() != fit.spec.p_w ||
        fit.params.sigma_theta.rows() != fit.spec.q() ||
        static_cast<int>(fit.params.gamma.size()) != fit.spec.num_risks ||
        static_cast<int>(fit.params.alpha.size()) != fit.spec.num_risks) {
      input_error("fit artifact parameters do not match its spec");
    }
    for (int k = 0; k < fit.spec.num_risks; ++k) {
      if (fit.params.gamma[static_cast<std::size_t>(k)].size() != fit.spec.p2 ||
          fit.params.alpha[static_cast<std::size_t>(k)].size() != fit.spec.q()) {
        input_error("fit artifact parameters do not match its spec");
      }
    }
    for (const auto& b : doc.at("baselines")) {
      fit.baselines.push_back(BaselineHazard::from_jumps(b.at("times").get<std::vector<double>>(),
                                                         b.at("ties").get<std::vector<int>>(),
                                                         b.at("jumps").get<std::vector<double>>()));
    }
    if (static_cast<int>(fit.baselines.size()) != fit.spec.num_risks) {
      input_error("fit artifact has the wrong number of baselines");
    }
    const int dim = fit.spec.num_params();
    if (!doc.at("covariance").is_null()) fit.cov_omega_hat = json_matrix(doc.at("covariance"), dim);
    fit.se_message = doc.at("se_message").get<std::string>();
    fit.converged = doc.at("converged").get<bool>();
    fit.n_iter = doc.at("n_iter").get<int>();
    fit.loglik_trace = doc.at("loglik_trace").get<std::vector<double>>();
    fit.subject_ids = doc.at("subject_ids").get<std::vector<std::string>>();
    fit.posterior_means = json_matrix(doc.at("posterior_means"), fit.spec.q());
    fit.em_seconds = doc.at("em_seconds").get<double>();
    fit.se_seconds = doc.at("se_seconds").get<double>();
  } catch (const json::exception& e) {
    input_error(std::string("malformed fit artifact: ") + e.what());
  }
  return out;
}

void save_fit(const fs::path& path, const FitResult& fit, const ColumnMap& columns) {
  write_text(path, fit_to_json(fit, columns).dump(1) + "\n");
}

LoadedFit load_fit(const fs::path& path) {
  std::ifstream in(path);
  if (!in) input_error("cannot open fit artifact " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    input_error("fit artifact " + path.string() + ": " + e.what());
  }
  return fit_from_json(doc);
}

}  // namespace lsjm
