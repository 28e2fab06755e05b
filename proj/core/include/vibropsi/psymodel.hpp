#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace vibropsi {

/// One candidate psychometric function:
///   psi(x) = gamma + (1 - delta - gamma) * (1 - 2^-((x / a)^b))
/// with x the stimulus separation in millimetres.
struct WeibullParams {
  double a = 1.0;      // threshold, mm
  double b = 1.0;      // slope
  double gamma = 0.5;  // guess rate (lower asymptote)
  double delta = 0.0;  // lapse (upper asymptote is 1 - delta)

  /// Throws Error(kInvalidArgument) unless a, b > 0, 0 < gamma < 1,
  /// 0 <= delta < 1 and gamma + delta < 1.
  void validate() const;

  bool operator==(const WeibullParams&) const = default;
};

/// Recognition rate at separation `x` (x >= 0). Assumes validated params.
double eval_weibull(const WeibullParams& params, double x);

enum class SlopeSpacing { kLinear, kLog };

/// Grid bounds; "count" is the number of points including both endpoints.
struct GridConfig {
  double a_min = 2.5;
  double a_max = 45.0;
  int a_count = 18;
  double b_min = 0.01;
  double b_max = 10.0;
  int b_count = 50;
  SlopeSpacing b_spacing = SlopeSpacing::kLinear;
  double gamma_min = 0.01;
  double gamma_max = 0.99;
  int gamma_count = 100;
  double delta = 0.02;

  bool operator==(const GridConfig&) const = default;
};

/// Discrete family of Weibull functions. Cells are laid out with gamma
/// varying fastest, then b, then a. Cells with gamma + delta >= 1 are kept
/// (the default top two gamma values); their curves are nonincreasing and
/// still map into (0, 1).
class ParameterGrid {
 public:
  ParameterGrid(GridConfig config, std::vector<double> a_values,
                std::vector<double> b_values, std::vector<double> gamma_values);

  const GridConfig& config() const noexcept { return config_; }
  const std::vector<double>& a_values() const noexcept { return a_values_; }
  const std::vector<double>& b_values() const noexcept { return b_values_; }
  const std::vector<double>& gamma_values() const noexcept { return gamma_values_; }
  double delta() const noexcept { return config_.delta; }

  std::size_t size() const noexcept {
    return a_values_.size() * b_values_.size() * gamma_values_.size();
  }
  std::size_t index(std::size_t ia, std::size_t ib, std::size_t ig) const noexcept {
    return (ia * b_values_.size() + ib) * gamma_values_.size() + ig;
  }
  std::size_t a_index(std::size_t cell) const noexcept {
    return cell / (b_values_.size() * gamma_values_.size());
  }
  std::size_t b_index(std::size_t cell) const noexcept {
    return (cell / gamma_values_.size()) % b_values_.size();
  }
  std::size_t gamma_index(std::size_t cell) const noexcept {
    return cell % gamma_values_.size();
  }

  WeibullParams cell(std::size_t i) const noexcept {
    return {a_values_[a_index(i)], b_values_[b_index(i)], gamma_values_[gamma_index(i)],
            config_.delta};
  }

 private:
  GridConfig config_;
  std::vector<double> a_values_;
  std::vector<double> b_values_;
  std::vector<double> gamma_values_;
};

ParameterGrid build_grid(const GridConfig& config = {});

/// `count` points from lo to hi inclusive; the last point is exactly `hi`.
std::vector<double> linspace(double lo, double hi, int count);

/// A psychometric curve evaluated on a separation grid.
struct CurveSamples {
  std::vector<double> x;                  // mm, strictly increasing
  std::vector<double> y;                  // recognition rate in [0, 1]
  std::optional<std::vector<double>> se;  // optional standard error per x

  /// Throws Error(kInvalidArgument) on size mismatch, non-increasing x, or y
  /// outside [0, 1].
  void validate() const;
};

/// 0.0, 0.1, ..., 45.0 mm (451 points), the sampling used for exported curves.
std::vector<double> default_curve_grid();

CurveSamples sample_curve(const WeibullParams& params, std::span<const double> xs);

/// Piecewise-linear interpolation, flat beyond the ends, clamped to [0, 1].
double interpolate(const CurveSamples& curve, double x);

/// Smallest separation in [x_min, x_max] where psi >= level; nullopt when the
/// level is not reached inside the range. Closed form.
std::optional<double> invert_curve(const WeibullParams& params, double level,
                                   double x_min = 0.0, double x_max = 45.0);

/// Same contract for a sampled curve using linear interpolation between
/// samples. Throws Error(kNonMonotoneCurve) if y decreases anywhere.
std::optional<double> invert_curve(const CurveSamples& curve, double level);

}  // namespace vibropsi
