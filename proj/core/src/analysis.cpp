#include "vibropsi/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "vibropsi/error.hpp"

namespace vibropsi {

namespace {

[[noreturn]] void invalid(const std::string& what) { throw Error(ErrorCode::kInvalidArgument, what); }

std::string fmt12(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_number(const std::string& cell, const std::filesystem::path& path) {
  const char* begin = cell.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0') {
    invalid("non-numeric value '" + cell + "' in " + path.string());
  }
  return v;
}

bool parse_bool(const std::string& cell, const std::filesystem::path& path) {
  if (cell == "true" || cell == "1") return true;
  if (cell == "false" || cell == "0") return false;
  invalid("non-boolean value '" + cell + "' in " + path.string());
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

Table read_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  Table t;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (first && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    if (line.empty()) continue;
    auto cells = split(line);
    if (first) {
      t.header = std::move(cells);
      first = false;
      continue;
    }
    if (cells.size() != t.header.size()) {
      invalid("row with " + std::to_string(cells.size()) + " columns in " + path.string());
    }
    t.rows.push_back(std::move(cells));
  }
  if (first) invalid("empty CSV file " + path.string());
  return t;
}

void expect_header(const Table& t, const std::vector<std::string>& expected,
                   const std::filesystem::path& path) {
  if (t.header.size() < expected.size() ||
      !std::equal(expected.begin(), expected.end(), t.header.begin())) {
    invalid("unexpected CSV header in " + path.string());
  }
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  return out;
}

void close_out(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw Error(ErrorCode::kIo, "failed writing " + path.string());
}

void require_monotone(const std::vector<double>& y, const std::string& what) {
  for (std::size_t i = 1; i < y.size(); ++i) {
    if (y[i] < y[i - 1]) throw Error(ErrorCode::kNonMonotoneCurve, what + " decreases");
  }
}

// Order-independent mean; identical values return that value exactly so the
// spread around it is zero.
double mean_sorted(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  if (v.front() == v.back()) return v.front();
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

double round_12(double v) {
  if (!std::isfinite(v)) return v;
  return std::strtod(fmt12(v).c_str(), nullptr);
}

void ReferenceCurve::validate() const {
  curve.validate();
  if (curve.x.empty()) invalid("reference curve is empty");
  require_monotone(curve.y, "reference curve");
  if (curve.x.front() > 2.5 || curve.x.back() < 45.0) {
    invalid("reference curve must cover at least 2.5 to 45 mm");
  }
}

ReferenceCurve load_reference_csv(const std::filesystem::path& path, std::string label,
                                  std::string provenance) {
  ReferenceCurve ref;
  ref.label = label.empty() ? path.stem().string() : std::move(label);
  ref.provenance = std::move(provenance);
  ref.curve = read_curve_csv(path);
  ref.curve.se.reset();
  ref.validate();
  return ref;
}

CurveSamples cohort_mean(std::span<const CurveSamples> curves) {
  if (curves.size() < 2) throw Error(ErrorCode::kInsufficientData, "cohort mean needs at least two curves");
  const auto& xs = curves.front().x;
  for (const auto& c : curves) {
    if (c.x != xs || c.y.size() != xs.size()) {
      throw Error(ErrorCode::kMismatchedGrids, "cohort curves use different separation grids");
    }
  }
  const double n = static_cast<double>(curves.size());
  CurveSamples out;
  out.x = xs;
  out.y.resize(xs.size());
  std::vector<double> se(xs.size());
  std::vector<double> column(curves.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    for (std::size_t k = 0; k < curves.size(); ++k) column[k] = curves[k].y[i];
    const double m = mean_sorted(column);
    double ss = 0.0;
    for (double v : column) ss += (v - m) * (v - m);
    out.y[i] = std::clamp(m, 0.0, 1.0);
    se[i] = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  }
  out.se = std::move(se);
  return out;
}

ThresholdReport extract_thresholds(const CurveSamples& curve, std::span<const double> levels) {
  ThresholdReport r;
  r.levels.assign(levels.begin(), levels.end());
  for (double level : levels) r.separations.push_back(invert_curve(curve, level));
  return r;
}

ThresholdReport extract_cohort_thresholds(std::span<const CurveSamples> curves,
                                          std::span<const double> levels) {
  ThresholdReport r = extract_thresholds(cohort_mean(curves), levels);
  std::vector<std::optional<double>> se;
  for (double level : levels) {
    std::vector<double> reached;
    for (const auto& c : curves) {
      if (auto x = invert_curve(c, level)) reached.push_back(*x);
    }
    if (reached.size() < 2) {
      se.push_back(std::nullopt);
      continue;
    }
    const double m = mean_sorted(reached);
    double ss = 0.0;
    for (double v : reached) ss += (v - m) * (v - m);
    const double n = static_cast<double>(reached.size());
    se.push_back(std::sqrt(ss / (n - 1.0)) / std::sqrt(n));
  }
  r.se = std::move(se);
  return r;
}

ComparisonReport compare_to_reference(std::span<const CurveSamples> curves,
                                      const ReferenceCurve& reference,
                                      std::span<const double> x_test, double alpha) {
  if (curves.size() < 2) throw Error(ErrorCode::kInsufficientData, "comparison needs at least two curves");
  if (x_test.empty()) invalid("comparison needs at least one test separation");
  if (!(alpha > 0.0 && alpha < 1.0)) invalid("alpha must lie in (0, 1)");
  const auto [lo, hi] = std::minmax_element(x_test.begin(), x_test.end());
  for (const auto& c : curves) {
    if (c.x.empty() || *lo < c.x.front() || *hi > c.x.back()) {
      invalid("every test separation must lie within each individual curve");
    }
  }
  ComparisonReport r;
  r.alpha = alpha;
  std::vector<double> values(curves.size());
  for (double x : x_test) {
    for (std::size_t k = 0; k < curves.size(); ++k) values[k] = interpolate(curves[k], x);
    // Sorted so the result does not depend on participant order.
    std::sort(values.begin(), values.end());
    const auto t = stats::t_test_one_sample(values, reference.at(x));
    r.x_values.push_back(x);
    r.t_values.push_back(t.t);
    r.p_values.push_back(t.p);
    r.degenerate.push_back(values.front() == values.back());
  }
  r.p_bonferroni = stats::bonferroni(r.p_values);
  for (double p : r.p_bonferroni) r.significant.push_back(p < alpha);
  return r;
}

void export_csv(const CurveSamples& curve, const std::filesystem::path& path) {
  curve.validate();
  auto out = open_out(path);
  out << "separation_mm,recognition_rate" << (curve.se ? ",se" : "") << '\n';
  for (std::size_t i = 0; i < curve.x.size(); ++i) {
    out << fmt12(curve.x[i]) << ',' << fmt12(curve.y[i]);
    if (curve.se) out << ',' << fmt12((*curve.se)[i]);
    out << '\n';
  }
  close_out(out, path);
}

void export_csv(const ThresholdReport& report, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "level,separation_mm,reached" << (report.se ? ",se" : "") << '\n';
  for (std::size_t i = 0; i < report.levels.size(); ++i) {
    const auto& s = report.separations[i];
    out << fmt12(report.levels[i]) << ',' << (s ? fmt12(*s) : "") << ',' << (s ? "true" : "false");
    if (report.se) {
      const auto& e = (*report.se)[i];
      out << ',' << (e ? fmt12(*e) : "");
    }
    out << '\n';
  }
  close_out(out, path);
}

void export_csv(const ComparisonReport& report, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "separation_mm,t,p,p_bonferroni,log10_p,log10_p_bonferroni,significant,degenerate\n";
  for (std::size_t i = 0; i < report.x_values.size(); ++i) {
    out << fmt12(report.x_values[i]) << ',' << fmt12(report.t_values[i]) << ','
        << fmt12(report.p_values[i]) << ',' << fmt12(report.p_bonferroni[i]) << ','
        << fmt12(std::log10(report.p_values[i])) << ','
        << fmt12(std::log10(report.p_bonferroni[i])) << ','
        << (report.significant[i] ? "true" : "false") << ','
        << (report.degenerate[i] ? "true" : "false") << '\n';
  }
  close_out(out, path);
}

CurveSamples read_curve_csv(const std::filesystem::path& path) {
  const Table t = read_table(path);
  expect_header(t, {"separation_mm", "recognition_rate"}, path);
  const bool with_se = t.header.size() >= 3 && t.header[2] == "se";
  CurveSamples c;
  std::vector<double> se;
  for (const auto& row : t.rows) {
    c.x.push_back(parse_number(row[0], path));
    c.y.push_back(parse_number(row[1], path));
    if (with_se) se.push_back(parse_number(row[2], path));
  }
  if (with_se) c.se = std::move(se);
  c.validate();
  return c;
}

ThresholdReport read_threshold_csv(const std::filesystem::path& path) {
  const Table t = read_table(path);
  expect_header(t, {"level", "separation_mm", "reached"}, path);
  const bool with_se = t.header.size() >= 4 && t.header[3] == "se";
  ThresholdReport r;
  std::vector<std::optional<double>> se;
  for (const auto& row : t.rows) {
    r.levels.push_back(parse_number(row[0], path));
    r.separations.push_back(parse_bool(row[2], path) ? std::optional(parse_number(row[1], path))
                                                     : std::nullopt);
    if (with_se) {
      se.push_back(row[3].empty() ? std::nullopt : std::optional(parse_number(row[3], path)));
    }
  }
  if (with_se) r.se = std::move(se);
  return r;
}

ComparisonReport read_comparison_csv(const std::filesystem::path& path, double alpha) {
  const Table t = read_table(path);
  expect_header(t, {"separation_mm", "t", "p", "p_bonferroni", "log10_p", "log10_p_bonferroni",
                    "significant", "degenerate"},
                path);
  ComparisonReport r;
  r.alpha = alpha;
  for (const auto& row : t.rows) {
    r.x_values.push_back(parse_number(row[0], path));
    r.t_values.push_back(parse_number(row[1], path));
    r.p_values.push_back(parse_number(row[2], path));
    r.p_bonferroni.push_back(parse_number(row[3], path));
    r.significant.push_back(parse_bool(row[6], path));
    r.degenerate.push_back(parse_bool(row[7], path));
  }
  return r;
}

}  // namespace vibropsi
