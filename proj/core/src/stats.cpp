#include "vibropsi/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>

#include "vibropsi/error.hpp"

namespace vibropsi {
namespace stats {

namespace {

[[noreturn]] void invalid(const std::string& what) {
  throw Error(ErrorCode::kInvalidArgument, what);
}

double mean_of(std::span<const double> v) {
  if (std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); })) return v.front();
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Identical samples give exactly zero, even when the rounded mean differs from
// the common value.
double sample_variance(std::span<const double> v, double mean) {
  if (std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); })) return 0.0;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return ss / static_cast<double>(v.size() - 1);
}

// Modified Lentz evaluation of the continued fraction for I_x(a, b).
double beta_continued_fraction(double x, double a, double b) {
  constexpr int kMaxIterations = 10000;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIterations; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace

double binomial_pmf(int k, int n, double p) {
  if (k < 0 || k > n) return 0.0;
  const double log_choose =
      std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
  return std::exp(log_choose + k * std::log(p) + (n - k) * std::log1p(-p));
}

double binomial_test(int k, int n, double p0) {
  if (n < 1 || k < 0 || k > n) invalid("binomial test needs 0 <= k <= n and n >= 1");
  if (!(p0 > 0.0 && p0 < 1.0)) invalid("binomial test null probability must lie in (0, 1)");
  constexpr double kRelativeSlack = 1.0 + 1e-7;
  const double cutoff = binomial_pmf(k, n, p0) * kRelativeSlack;
  double total = 0.0;
  int included = 0;
  for (int i = 0; i <= n; ++i) {
    const double pi = binomial_pmf(i, n, p0);
    if (pi <= cutoff) {
      total += pi;
      ++included;
    }
  }
  if (included == n + 1) return 1.0;
  return std::clamp(total, 0.0, 1.0);
}

double regularized_incomplete_beta(double x, double a, double b) {
  if (!(a > 0.0 && b > 0.0)) invalid("incomplete beta needs a, b > 0");
  if (!(x >= 0.0 && x <= 1.0)) invalid("incomplete beta needs x in [0, 1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                           a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * beta_continued_fraction(x, a, b) / a;
  }
  return 1.0 - front * beta_continued_fraction(1.0 - x, b, a) / b;
}

double student_t_cdf(double t, double df) {
  if (!(df > 0.0)) invalid("t distribution needs df > 0");
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  const double x = df / (df + t * t);
  const double tail = 0.5 * regularized_incomplete_beta(x, 0.5 * df, 0.5);
  return t > 0.0 ? 1.0 - tail : tail;
}

namespace {

TTestResult finish(double diff, double se, double df) {
  TTestResult r;
  r.df = df;
  if (!(se > 0.0)) {
    if (diff == 0.0) {
      r.t = 0.0;
      r.p = 1.0;
    } else {
      r.t = diff > 0 ? std::numeric_limits<double>::infinity()
                     : -std::numeric_limits<double>::infinity();
      r.p = 0.0;
      r.degenerate = true;
    }
    return r;
  }
  r.t = diff / se;
  const double x = df / (df + r.t * r.t);
  r.p = std::clamp(regularized_incomplete_beta(x, 0.5 * df, 0.5), 0.0, 1.0);
  return r;
}

}  // namespace

TTestResult t_test_one_sample(std::span<const double> samples, double mu0) {
  if (samples.size() < 2) invalid("one-sample t-test needs at least two samples");
  const double n = static_cast<double>(samples.size());
  const double m = mean_of(samples);
  const double var = sample_variance(samples, m);
  return finish(m - mu0, std::sqrt(var / n), n - 1.0);
}

TTestResult t_test_two_sample(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) invalid("two-sample t-test needs at least two samples per group");
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double ma = mean_of(a);
  const double mb = mean_of(b);
  const double qa = sample_variance(a, ma) / na;
  const double qb = sample_variance(b, mb) / nb;
  const double se2 = qa + qb;
  const double denom = qa * qa / (na - 1.0) + qb * qb / (nb - 1.0);
  const double df = denom > 0.0 ? se2 * se2 / denom : na + nb - 2.0;
  return finish(ma - mb, std::sqrt(se2), df);
}

std::vector<double> bonferroni(std::span<const double> p_values) {
  std::vector<double> out;
  out.reserve(p_values.size());
  const double m = static_cast<double>(p_values.size());
  for (double p : p_values) {
    if (!(p >= 0.0 && p <= 1.0)) invalid("p-values must lie in [0, 1]");
    out.push_back(std::min(1.0, p * m));
  }
  return out;
}

}  // namespace stats

std::string_view to_string(BiasFlag f) {
  return f == BiasFlag::kSideBias ? "SIDE_BIAS" : "RT_ANOMALY";
}

BiasFlag bias_flag_from_string(std::string_view s) {
  if (s == "SIDE_BIAS") return BiasFlag::kSideBias;
  if (s == "RT_ANOMALY") return BiasFlag::kRtAnomaly;
  throw Error(ErrorCode::kInvalidArgument, "unknown bias flag '" + std::string(s) + "'");
}

BiasReport run_bias_guard(std::span<const TrialRecord> trials, double alpha) {
  BiasReport report;
  report.alpha = alpha;
  if (trials.empty()) return report;

  std::array<std::vector<double>, 2> rts;
  std::map<double, SeparationSideRow> rows;
  for (const TrialRecord& t : trials) {
    const int answered = option_index(t.response);
    const int shown = option_index(t.target);
    ++report.side_counts[static_cast<std::size_t>(answered)];
    rts[static_cast<std::size_t>(answered)].push_back(t.response_time_ms);
    SeparationSideRow& row = rows[t.separation];
    row.separation = t.separation;
    ++row.trials;
    ++row.responses[static_cast<std::size_t>(answered)];
    ++row.targets[static_cast<std::size_t>(shown)];
    if (t.correct) ++row.correct[static_cast<std::size_t>(shown)];
  }
  for (auto& [sep, row] : rows) report.per_separation.push_back(row);

  const int n = report.side_counts[0] + report.side_counts[1];
  report.binomial_p = stats::binomial_test(report.side_counts[0], n, 0.5);
  if (rts[0].size() >= 2 && rts[1].size() >= 2) {
    report.rt_test = stats::t_test_two_sample(rts[0], rts[1]);
    report.rt_test_p = report.rt_test->p;
  }
  if (report.binomial_p < alpha) report.flags.push_back(BiasFlag::kSideBias);
  if (report.rt_test_p < alpha) report.flags.push_back(BiasFlag::kRtAnomaly);
  report.excluded = !report.flags.empty();
  return report;
}

}  // namespace vibropsi
