#pragma once

// Constructed curves shared by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <vector>

#include "oracles.hpp"
#include "vibropsi/analysis.hpp"
#include "vibropsi/psymodel.hpp"

namespace fixture {

inline std::filesystem::path reference_csv() {
  return std::filesystem::path(VIBROPSI_SOURCE_DIR) / "data" / "reference" / "static_2pod_fixture.csv";
}

/// Curve rising from 0.59 to exactly 0.93 at 45 mm and crossing 0.9 at
/// 36.6 mm: a Weibull (b = 3) shape rescaled so its value at 45 mm is the
/// maximum, with a found by bisection.
inline vibropsi::CurveSamples epce_like_curve() {
  const double lo = 0.59, hi = 0.93;
  const auto shape = [](double a, double x) { return 1.0 - std::exp2(-std::pow(x / a, 3.0)); };
  const double want = (0.9 - lo) / (hi - lo);
  // The ratio shape(36.6)/shape(45) falls as a grows.
  double a0 = 1.0, a1 = 200.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (a0 + a1);
    (shape(mid, 36.6) / shape(mid, 45.0) < want ? a1 : a0) = mid;
  }
  const double a = 0.5 * (a0 + a1);
  vibropsi::CurveSamples c;
  c.x = vibropsi::default_curve_grid();
  for (double x : c.x) c.y.push_back(lo + (hi - lo) * shape(a, x) / shape(a, 45.0));
  c.y.back() = hi;
  return c;
}

/// Weight of the divergence at x: zero up to 12.5 mm, one from 15 mm, linear
/// in between (no candidate separation lies strictly inside). The ramp is
/// shallower than the reference there, so every member stays monotone.
inline double divergence_weight(double x) { return std::clamp((x - 12.5) / 2.5, 0.0, 1.0); }

/// 23 participants: reference plus a symmetric per-participant offset, and
/// 0.05 lower from 15 mm on.
inline std::vector<vibropsi::CurveSamples> diverging_cohort(const vibropsi::ReferenceCurve& ref) {
  std::vector<vibropsi::CurveSamples> cohort;
  const auto xs = vibropsi::default_curve_grid();
  for (int j = 0; j < 23; ++j) {
    const double offset = (j - 11) * 0.003;
    vibropsi::CurveSamples c;
    c.x = xs;
    for (double x : xs) c.y.push_back(ref.at(x) + offset - 0.05 * divergence_weight(x));
    cohort.push_back(std::move(c));
  }
  return cohort;
}

}  // namespace fixture
