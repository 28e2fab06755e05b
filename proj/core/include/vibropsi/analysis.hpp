#pragma once

// Cohort aggregation: mean curves, threshold levels and per-separation
// comparison against a reference curve, plus their CSV exports.

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vibropsi/psymodel.hpp"
#include "vibropsi/stats.hpp"

namespace vibropsi {

/// Static-stimulus comparison target. Monotone nondecreasing, covering at
/// least [2.5, 45] mm; evaluated by piecewise-linear interpolation.
struct ReferenceCurve {
  std::string label;
  CurveSamples curve;
  std::string provenance;

  void validate() const;
  double at(double x) const { return interpolate(curve, x); }
};

/// Two-column `separation_mm,recognition_rate` CSV with a header row.
ReferenceCurve load_reference_csv(const std::filesystem::path& path, std::string label = {},
                                  std::string provenance = {});

inline constexpr std::array<double, 5> kThresholdLevels = {0.75, 0.80, 0.85, 0.90, 0.95};

struct ThresholdReport {
  std::vector<double> levels;
  std::vector<std::optional<double>> separations;  // nullopt = not reached
  std::optional<std::vector<std::optional<double>>> se;

  bool operator==(const ThresholdReport&) const = default;
};

struct ComparisonReport {
  std::vector<double> x_values;
  std::vector<double> t_values;
  std::vector<double> p_values;
  std::vector<double> p_bonferroni;
  std::vector<bool> significant;
  std::vector<bool> degenerate;  // zero cohort variance at that x
  double alpha = 0.05;

  bool operator==(const ComparisonReport&) const = default;
};

/// Pointwise mean with SE = s / sqrt(n). Needs >= 2 curves on identical
/// grids (Error(kMismatchedGrids) otherwise).
CurveSamples cohort_mean(std::span<const CurveSamples> curves);

/// Inverts a monotone curve at each level in `levels`.
ThresholdReport extract_thresholds(const CurveSamples& curve,
                                   std::span<const double> levels = kThresholdLevels);

/// Thresholds of the mean curve, with SE taken over participants whose own
/// curve reaches that level (absent when fewer than two do).
ThresholdReport extract_cohort_thresholds(std::span<const CurveSamples> curves,
                                          std::span<const double> levels = kThresholdLevels);

/// One-sample t-test of the participants' values against the reference at
/// each x, Bonferroni-corrected over |x_test|.
ComparisonReport compare_to_reference(std::span<const CurveSamples> curves,
                                      const ReferenceCurve& reference,
                                      std::span<const double> x_test, double alpha = 0.05);

// CSV exports, values printed with 12 significant digits.
//   curve:       separation_mm,recognition_rate[,se]
//   thresholds:  level,separation_mm,reached[,se]
//   comparison:  separation_mm,t,p,p_bonferroni,log10_p,log10_p_bonferroni,significant,degenerate
void export_csv(const CurveSamples& curve, const std::filesystem::path& path);
void export_csv(const ThresholdReport& report, const std::filesystem::path& path);
void export_csv(const ComparisonReport& report, const std::filesystem::path& path);

CurveSamples read_curve_csv(const std::filesystem::path& path);
ThresholdReport read_threshold_csv(const std::filesystem::path& path);
ComparisonReport read_comparison_csv(const std::filesystem::path& path, double alpha = 0.05);

/// Value as it survives a CSV round trip.
double round_12(double v);

}  // namespace vibropsi
