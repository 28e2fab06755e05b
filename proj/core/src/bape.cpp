#include "vibropsi/bape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "vibropsi/error.hpp"

namespace vibropsi {

namespace {

constexpr double kDegenerateMass = 1e-300;

double xlogx_free_log(double w) { return w > 0.0 ? std::log(w) : 0.0; }

// Z log Z - S, the Z-weighted entropy of the branch posterior whose
// unnormalised weights are u_i with Z = sum u_i and S = sum u_i log u_i.
double weighted_branch_entropy(double z, double s) {
  if (!(z > 0.0)) return 0.0;
  return z * std::log(z) - s;
}

Selection pick(std::vector<double> expected, const CandidateSet& candidates) {
  Selection sel;
  sel.index = 0;
  for (std::size_t k = 1; k < expected.size(); ++k) {
    const double best = expected[sel.index];
    const double tol = kSelectionTieTolerance * std::max(1.0, std::fabs(best));
    if (expected[k] < best - tol) sel.index = k;
  }
  sel.separation = candidates.separations[sel.index];
  sel.expected_entropy = expected[sel.index];
  sel.expected_entropies = std::move(expected);
  return sel;
}

}  // namespace

void CandidateSet::validate(double range_min, double range_max) const {
  if (separations.empty()) throw Error(ErrorCode::kInvalidArgument, "candidate set is empty");
  for (std::size_t i = 0; i < separations.size(); ++i) {
    const double x = separations[i];
    if (!(x >= range_min && x <= range_max)) {
      throw Error(ErrorCode::kInvalidArgument,
                  "candidate separation " + std::to_string(x) + " mm outside [" +
                      std::to_string(range_min) + ", " + std::to_string(range_max) + "]");
    }
    if (i > 0 && !(x > separations[i - 1])) {
      throw Error(ErrorCode::kInvalidArgument, "candidate separations must be strictly increasing");
    }
  }
}

CandidateSet default_candidates() {
  return CandidateSet{linspace(2.5, 45.0, 18)};
}

BapeModel::BapeModel(ParameterGrid grid, CandidateSet candidates)
    : grid_(std::move(grid)), candidates_(std::move(candidates)) {
  candidates_.validate(0.0, std::numeric_limits<double>::max());
  const std::size_t n = grid_.size();
  const std::size_t k_count = candidates_.separations.size();
  psi_.resize(n * k_count);
  log_psi_.resize(n * k_count);
  log_not_psi_.resize(n * k_count);
  for (std::size_t k = 0; k < k_count; ++k) {
    const double x = candidates_.separations[k];
    for (std::size_t i = 0; i < n; ++i) {
      const double p = eval_weibull(grid_.cell(i), x);
      psi_[k * n + i] = p;
      log_psi_[k * n + i] = xlogx_free_log(p);
      log_not_psi_[k * n + i] = xlogx_free_log(1.0 - p);
    }
  }
}

std::shared_ptr<const BapeModel> BapeModel::create(const GridConfig& grid_config,
                                                   CandidateSet candidates) {
  return std::make_shared<const BapeModel>(build_grid(grid_config), std::move(candidates));
}

std::optional<std::size_t> BapeModel::candidate_index(double x) const noexcept {
  const auto& s = candidates_.separations;
  for (std::size_t k = 0; k < s.size(); ++k) {
    if (s[k] == x) return k;
  }
  return std::nullopt;
}

Posterior Posterior::uniform(std::shared_ptr<const BapeModel> model) {
  const std::size_t n = model->cell_count();
  std::vector<double> w(n, 1.0 / static_cast<double>(n));
  return Posterior(std::move(model), std::move(w), 0);
}

Posterior Posterior::from_weights(std::shared_ptr<const BapeModel> model,
                                  std::vector<double> weights, int trial_count) {
  if (weights.size() != model->cell_count()) {
    throw Error(ErrorCode::kInvalidArgument, "weight vector does not match the grid size");
  }
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "weights must be non-negative");
    total += w;
  }
  if (!(total > 0.0)) throw Error(ErrorCode::kDegeneratePosterior, "weights have no mass");
  for (double& w : weights) w /= total;
  return Posterior(std::move(model), std::move(weights), trial_count);
}

Posterior update(const Posterior& posterior, double x, Outcome outcome) {
  const BapeModel& model = posterior.model();
  const std::size_t n = model.cell_count();
  const auto& w = posterior.weights();
  std::vector<double> next(n);
  const bool correct = outcome == Outcome::kCorrect;

  if (auto k = model.candidate_index(x)) {
    const auto psi = model.psi(*k);
    for (std::size_t i = 0; i < n; ++i) next[i] = w[i] * (correct ? psi[i] : 1.0 - psi[i]);
  } else {
    const ParameterGrid& grid = model.grid();
    for (std::size_t i = 0; i < n; ++i) {
      const double p = eval_weibull(grid.cell(i), x);
      next[i] = w[i] * (correct ? p : 1.0 - p);
    }
  }

  double total = 0.0;
  for (double v : next) total += v;
  if (!(total >= kDegenerateMass)) {
    throw Error(ErrorCode::kDegeneratePosterior,
                "posterior mass underflowed after update at x = " + std::to_string(x));
  }
  for (double& v : next) v /= total;
  return Posterior(posterior.model_ptr(), std::move(next), posterior.trial_count() + 1);
}

double entropy(const Posterior& posterior) {
  double h = 0.0;
  for (double w : posterior.weights()) {
    if (w > 0.0) h -= w * std::log(w);
  }
  return h;
}

double predict_correct(const Posterior& posterior, double x) {
  const BapeModel& model = posterior.model();
  const auto& w = posterior.weights();
  double p = 0.0;
  if (auto k = model.candidate_index(x)) {
    const auto psi = model.psi(*k);
    for (std::size_t i = 0; i < w.size(); ++i) p += w[i] * psi[i];
  } else {
    const ParameterGrid& grid = model.grid();
    for (std::size_t i = 0; i < w.size(); ++i) p += w[i] * eval_weibull(grid.cell(i), x);
  }
  return p;
}

Selection select_next(const Posterior& posterior) {
  const BapeModel& model = posterior.model();
  const auto& w = posterior.weights();
  const std::size_t n = w.size();

  // With u = w * L the branch entropy term is sum u log u = sum u (log w + log L),
  // so one pass of logs over the weights serves every candidate.
  std::vector<double> log_w(n);
  for (std::size_t i = 0; i < n; ++i) log_w[i] = xlogx_free_log(w[i]);

  const std::size_t k_count = model.candidates().separations.size();
  std::vector<double> expected(k_count);
  for (std::size_t k = 0; k < k_count; ++k) {
    const auto psi = model.psi(k);
    const auto lp = model.log_psi(k);
    const auto lq = model.log_not_psi(k);
    double zc = 0.0, sc = 0.0, zi = 0.0, si = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double uc = w[i] * psi[i];
      const double ui = w[i] - uc;
      zc += uc;
      zi += ui;
      sc += uc * (log_w[i] + lp[i]);
      si += ui * (log_w[i] + lq[i]);
    }
    expected[k] = weighted_branch_entropy(zc, sc) + weighted_branch_entropy(zi, si);
  }
  return pick(std::move(expected), model.candidates());
}

Selection select_next(const Posterior& posterior, const CandidateSet& candidates) {
  if (candidates == posterior.model().candidates()) return select_next(posterior);
  candidates.validate(0.0, std::numeric_limits<double>::max());
  const ParameterGrid& grid = posterior.model().grid();
  const auto& w = posterior.weights();
  std::vector<double> expected;
  expected.reserve(candidates.separations.size());
  for (double x : candidates.separations) {
    double zc = 0.0, sc = 0.0, zi = 0.0, si = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (!(w[i] > 0.0)) continue;
      const double p = eval_weibull(grid.cell(i), x);
      const double lw = std::log(w[i]);
      const double uc = w[i] * p;
      const double ui = w[i] * (1.0 - p);
      zc += uc;
      zi += ui;
      if (uc > 0.0) sc += uc * (lw + std::log(p));
      if (ui > 0.0) si += ui * (lw + std::log1p(-p));
    }
    expected.push_back(weighted_branch_entropy(zc, sc) + weighted_branch_entropy(zi, si));
  }
  return pick(std::move(expected), candidates);
}

Postmean postmean_curve(const Posterior& posterior, std::span<const double> xs) {
  const ParameterGrid& grid = posterior.model().grid();
  const auto& w = posterior.weights();
  const std::size_t na = grid.a_values().size();
  const std::size_t nb = grid.b_values().size();
  const std::size_t ng = grid.gamma_values().size();
  const double delta = grid.delta();

  // psi = g + c F(x; a, b) with c = 1 - delta - g, so per (a, b) column the
  // gamma sums collapse into five moments and the curve costs |a||b| per x.
  struct Moments {
    double g = 0, c = 0, gg = 0, gc = 0, cc = 0;
  };
  std::vector<Moments> cols(na * nb);
  Postmean out;
  for (std::size_t ia = 0; ia < na; ++ia) {
    for (std::size_t ib = 0; ib < nb; ++ib) {
      Moments& m = cols[ia * nb + ib];
      double col_mass = 0.0;
      for (std::size_t ig = 0; ig < ng; ++ig) {
        const double wi = w[grid.index(ia, ib, ig)];
        const double g = grid.gamma_values()[ig];
        const double c = 1.0 - delta - g;
        col_mass += wi;
        m.g += wi * g;
        m.c += wi * c;
        m.gg += wi * g * g;
        m.gc += wi * g * c;
        m.cc += wi * c * c;
        out.expected_gamma += wi * g;
      }
      out.expected_a += col_mass * grid.a_values()[ia];
      out.expected_b += col_mass * grid.b_values()[ib];
    }
  }

  out.curve.x.assign(xs.begin(), xs.end());
  out.curve.y.reserve(xs.size());
  std::vector<double> se;
  se.reserve(xs.size());
  for (double x : xs) {
    double mean = 0.0, second = 0.0;
    for (std::size_t ia = 0; ia < na; ++ia) {
      const double ratio = x / grid.a_values()[ia];
      for (std::size_t ib = 0; ib < nb; ++ib) {
        const Moments& m = cols[ia * nb + ib];
        const double f = 1.0 - std::exp2(-std::pow(ratio, grid.b_values()[ib]));
        mean += m.g + f * m.c;
        second += m.gg + 2.0 * f * m.gc + f * f * m.cc;
      }
    }
    const double var = second - mean * mean;
    out.curve.y.push_back(std::clamp(mean, 0.0, 1.0));
    se.push_back(var > 0.0 ? std::sqrt(var) : 0.0);
  }
  out.curve.se = std::move(se);
  return out;
}

Marginals marginals(const Posterior& posterior) {
  const ParameterGrid& grid = posterior.model().grid();
  Marginals m;
  m.a.assign(grid.a_values().size(), 0.0);
  m.b.assign(grid.b_values().size(), 0.0);
  m.gamma.assign(grid.gamma_values().size(), 0.0);
  const auto& w = posterior.weights();
  for (std::size_t i = 0; i < w.size(); ++i) {
    m.a[grid.a_index(i)] += w[i];
    m.b[grid.b_index(i)] += w[i];
    m.gamma[grid.gamma_index(i)] += w[i];
  }
  return m;
}

}  // namespace vibropsi
