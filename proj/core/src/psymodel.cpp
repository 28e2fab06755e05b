#include "vibropsi/psymodel.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "vibropsi/error.hpp"

namespace vibropsi {

namespace {

constexpr double kMonotoneSlack = 1e-12;

[[noreturn]] void invalid(const std::string& what) {
  throw Error(ErrorCode::kInvalidArgument, what);
}

void require_increasing(const std::vector<double>& v, const char* name) {
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (!(v[i] > v[i - 1])) invalid(std::string(name) + " values must be strictly increasing");
  }
}

}  // namespace

void WeibullParams::validate() const {
  if (!(a > 0.0) || !std::isfinite(a)) invalid("threshold a must be positive");
  if (!(b > 0.0) || !std::isfinite(b)) invalid("slope b must be positive");
  if (!(gamma > 0.0 && gamma < 1.0)) invalid("guess rate gamma must lie in (0, 1)");
  if (!(delta >= 0.0 && delta < 1.0)) invalid("lapse delta must lie in [0, 1)");
  if (!(gamma + delta < 1.0)) invalid("gamma + delta must be below 1");
}

double eval_weibull(const WeibullParams& p, double x) {
  const double f = 1.0 - std::exp2(-std::pow(x / p.a, p.b));
  return p.gamma + (1.0 - p.delta - p.gamma) * f;
}

std::vector<double> linspace(double lo, double hi, int count) {
  if (count < 2) invalid("grid counts must be at least 2");
  std::vector<double> out(static_cast<std::size_t>(count));
  const double span = hi - lo;
  for (int i = 0; i < count; ++i) {
    out[static_cast<std::size_t>(i)] = lo + span * i / (count - 1);
  }
  out.back() = hi;
  return out;
}

ParameterGrid::ParameterGrid(GridConfig config, std::vector<double> a_values,
                             std::vector<double> b_values, std::vector<double> gamma_values)
    : config_(config),
      a_values_(std::move(a_values)),
      b_values_(std::move(b_values)),
      gamma_values_(std::move(gamma_values)) {
  if (a_values_.empty() || b_values_.empty() || gamma_values_.empty()) {
    invalid("parameter grid axes must be non-empty");
  }
  require_increasing(a_values_, "a");
  require_increasing(b_values_, "b");
  require_increasing(gamma_values_, "gamma");
  if (!(a_values_.front() > 0.0 && b_values_.front() > 0.0)) invalid("a and b must be positive");
  if (!(gamma_values_.front() > 0.0 && gamma_values_.back() < 1.0)) {
    invalid("gamma values must lie in (0, 1)");
  }
  if (!(config_.delta >= 0.0 && config_.delta < 1.0)) invalid("delta must lie in [0, 1)");
}

ParameterGrid build_grid(const GridConfig& c) {
  if (!(c.a_min > 0.0 && c.b_min > 0.0 && c.gamma_min > 0.0)) {
    invalid("grid lower bounds must be positive");
  }
  if (!(c.a_max > c.a_min && c.b_max > c.b_min && c.gamma_max > c.gamma_min)) {
    invalid("grid upper bounds must exceed lower bounds");
  }
  if (!(c.gamma_max < 1.0)) invalid("gamma upper bound must be below 1");
  if (!(c.delta >= 0.0 && c.delta < 1.0)) invalid("delta must lie in [0, 1)");

  std::vector<double> b_values;
  if (c.b_spacing == SlopeSpacing::kLog) {
    b_values = linspace(std::log(c.b_min), std::log(c.b_max), c.b_count);
    for (double& v : b_values) v = std::exp(v);
    b_values.front() = c.b_min;
    b_values.back() = c.b_max;
  } else {
    b_values = linspace(c.b_min, c.b_max, c.b_count);
  }
  return ParameterGrid(c, linspace(c.a_min, c.a_max, c.a_count), std::move(b_values),
                       linspace(c.gamma_min, c.gamma_max, c.gamma_count));
}

void CurveSamples::validate() const {
  if (x.size() != y.size()) invalid("curve x and y sizes differ");
  if (se && se->size() != x.size()) invalid("curve se size differs from x");
  require_increasing(x, "curve x");
  for (double v : y) {
    if (!(v >= 0.0 && v <= 1.0)) invalid("curve recognition rates must lie in [0, 1]");
  }
}

std::vector<double> default_curve_grid() {
  std::vector<double> xs(451);
  for (std::size_t i = 0; i < xs.size(); ++i) xs[i] = static_cast<double>(i) / 10.0;
  return xs;
}

CurveSamples sample_curve(const WeibullParams& params, std::span<const double> xs) {
  CurveSamples out;
  out.x.assign(xs.begin(), xs.end());
  out.y.reserve(xs.size());
  for (double x : xs) out.y.push_back(eval_weibull(params, x));
  return out;
}

double interpolate(const CurveSamples& curve, double x) {
  const auto& xs = curve.x;
  const auto& ys = curve.y;
  if (xs.empty()) invalid("cannot interpolate an empty curve");
  double v;
  if (x <= xs.front()) {
    v = ys.front();
  } else if (x >= xs.back()) {
    v = ys.back();
  } else {
    const auto hi = static_cast<std::size_t>(std::upper_bound(xs.begin(), xs.end(), x) - xs.begin());
    const std::size_t lo = hi - 1;
    const double t = (x - xs[lo]) / (xs[hi] - xs[lo]);
    v = ys[lo] + t * (ys[hi] - ys[lo]);
  }
  return std::clamp(v, 0.0, 1.0);
}

std::optional<double> invert_curve(const WeibullParams& p, double level, double x_min,
                                   double x_max) {
  if (!(level > 0.0 && level < 1.0)) invalid("threshold level must lie in (0, 1)");
  if (level <= eval_weibull(p, x_min)) return x_min;
  const double top = 1.0 - p.delta;
  if (level >= top) return std::nullopt;
  const double x = p.a * std::pow(std::log2((top - p.gamma) / (top - level)), 1.0 / p.b);
  if (x > x_max) return std::nullopt;
  return std::max(x, x_min);
}

std::optional<double> invert_curve(const CurveSamples& curve, double level) {
  if (!(level > 0.0 && level < 1.0)) invalid("threshold level must lie in (0, 1)");
  const auto& xs = curve.x;
  const auto& ys = curve.y;
  if (xs.empty() || xs.size() != ys.size()) invalid("curve x and y sizes differ");
  for (std::size_t i = 1; i < ys.size(); ++i) {
    if (ys[i] < ys[i - 1] - kMonotoneSlack) {
      throw Error(ErrorCode::kNonMonotoneCurve,
                  "curve decreases at x = " + std::to_string(xs[i]));
    }
  }
  if (ys.front() >= level) return xs.front();
  for (std::size_t i = 1; i < ys.size(); ++i) {
    if (ys[i] >= level) {
      const double dy = ys[i] - ys[i - 1];
      if (dy <= 0.0) return xs[i];
      const double t = (level - ys[i - 1]) / dy;
      return xs[i - 1] + std::clamp(t, 0.0, 1.0) * (xs[i] - xs[i - 1]);
    }
  }
  return std::nullopt;
}

}  // namespace vibropsi
