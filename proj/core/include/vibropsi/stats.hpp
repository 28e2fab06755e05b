#pragma once

#include <array>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "vibropsi/task.hpp"

namespace vibropsi {
namespace stats {

double binomial_pmf(int k, int n, double p);

/// Exact two-sided binomial test: the total probability of every outcome no
/// more likely than k (with a 1e-7 relative slack on the comparison).
double binomial_test(int k, int n, double p0 = 0.5);

/// I_x(a, b) by continued fraction.
double regularized_incomplete_beta(double x, double a, double b);

/// Student t cumulative distribution.
double student_t_cdf(double t, double df);

struct TTestResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;  // two-sided
  /// Zero variance with a non-zero mean difference: reported as p = 0.
  bool degenerate = false;

  bool operator==(const TTestResult&) const = default;
};

TTestResult t_test_one_sample(std::span<const double> samples, double mu0);

/// Welch's unequal-variance test.
TTestResult t_test_two_sample(std::span<const double> a, std::span<const double> b);

/// p * m clamped at 1, where m is the list length.
std::vector<double> bonferroni(std::span<const double> p_values);

}  // namespace stats

enum class BiasFlag { kSideBias, kRtAnomaly };

std::string_view to_string(BiasFlag f);
BiasFlag bias_flag_from_string(std::string_view s);

/// Side (option) answers at one separation, for visual inspection.
struct SeparationSideRow {
  double separation = 0.0;
  int trials = 0;
  std::array<int, 2> responses{};  // answers per option
  std::array<int, 2> targets{};    // presentations per option
  std::array<int, 2> correct{};    // correct answers per target option

  bool operator==(const SeparationSideRow&) const = default;
};

struct BiasReport {
  double alpha = 0.05;
  std::array<int, 2> side_counts{};  // responses per option (left/right or H/V)
  double binomial_p = 1.0;
  /// Welch test of response times split by answered option; absent when an
  /// option has fewer than two answers.
  std::optional<stats::TTestResult> rt_test;
  double rt_test_p = 1.0;
  std::vector<SeparationSideRow> per_separation;
  std::vector<BiasFlag> flags;
  bool excluded = false;

  bool operator==(const BiasReport&) const = default;
};

/// Side-preference binomial test, response-time t-test and the inspection
/// table. Either test below alpha raises its flag and excludes the run.
BiasReport run_bias_guard(std::span<const TrialRecord> trials, double alpha = 0.05);

}  // namespace vibropsi
