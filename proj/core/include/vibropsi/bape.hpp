#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "vibropsi/psymodel.hpp"

namespace vibropsi {

/// Separations (mm) the adaptive procedure may query, strictly increasing.
struct CandidateSet {
  std::vector<double> separations;

  /// Throws Error(kInvalidArgument) if empty, not strictly increasing, or any
  /// value falls outside [range_min, range_max].
  void validate(double range_min, double range_max) const;

  bool operator==(const CandidateSet&) const = default;
};

/// The 18 values 2.5, 5.0, ..., 45.0 mm.
CandidateSet default_candidates();

enum class Outcome { kIncorrect, kCorrect };

/// Grid plus candidate set plus the precomputed likelihood table
/// psi_cell(candidate) and its logs. Immutable once built and shared by every
/// posterior (and session) that uses it.
class BapeModel {
 public:
  static std::shared_ptr<const BapeModel> create(const GridConfig& grid_config,
                                                 CandidateSet candidates);

  const ParameterGrid& grid() const noexcept { return grid_; }
  const CandidateSet& candidates() const noexcept { return candidates_; }
  std::size_t cell_count() const noexcept { return grid_.size(); }

  /// psi for every cell at candidate k.
  std::span<const double> psi(std::size_t k) const noexcept { return row(psi_, k); }
  std::span<const double> log_psi(std::size_t k) const noexcept { return row(log_psi_, k); }
  /// log(1 - psi), with 0 stored where 1 - psi == 0.
  std::span<const double> log_not_psi(std::size_t k) const noexcept {
    return row(log_not_psi_, k);
  }

  /// Index of `x` in the candidate set if it is an exact member.
  std::optional<std::size_t> candidate_index(double x) const noexcept;

  BapeModel(ParameterGrid grid, CandidateSet candidates);

 private:
  std::span<const double> row(const std::vector<double>& table, std::size_t k) const noexcept {
    return {table.data() + k * grid_.size(), grid_.size()};
  }

  ParameterGrid grid_;
  CandidateSet candidates_;
  std::vector<double> psi_;
  std::vector<double> log_psi_;
  std::vector<double> log_not_psi_;
};

/// Normalised belief over the grid cells. A value type: operations return new
/// posteriors and never mutate their input.
class Posterior {
 public:
  static Posterior uniform(std::shared_ptr<const BapeModel> model);
  /// Normalises `weights`; throws if the size mismatches or the mass is not
  /// positive.
  static Posterior from_weights(std::shared_ptr<const BapeModel> model,
                                std::vector<double> weights, int trial_count = 0);

  const BapeModel& model() const noexcept { return *model_; }
  const std::shared_ptr<const BapeModel>& model_ptr() const noexcept { return model_; }
  const std::vector<double>& weights() const noexcept { return weights_; }
  int trial_count() const noexcept { return trial_count_; }

  bool operator==(const Posterior& other) const noexcept {
    return model_ == other.model_ && trial_count_ == other.trial_count_ &&
           weights_ == other.weights_;
  }

 private:
  Posterior(std::shared_ptr<const BapeModel> model, std::vector<double> weights, int trials)
      : model_(std::move(model)), weights_(std::move(weights)), trial_count_(trials) {}

  friend Posterior update(const Posterior&, double, Outcome);

  std::shared_ptr<const BapeModel> model_;
  std::vector<double> weights_;
  int trial_count_ = 0;
};

/// Multiplies each cell by psi(x) or 1 - psi(x) and renormalises.
/// Throws Error(kDegeneratePosterior) if the unnormalised mass drops below
/// 1e-300.
Posterior update(const Posterior& posterior, double x, Outcome outcome);

/// Shannon entropy in nats, with 0 log 0 = 0.
double entropy(const Posterior& posterior);

/// Posterior predictive probability of a correct response at x.
double predict_correct(const Posterior& posterior, double x);

struct Selection {
  std::size_t index = 0;          // into the candidate set
  double separation = 0.0;        // mm
  double expected_entropy = 0.0;  // nats, at the chosen candidate
  std::vector<double> expected_entropies;  // one per candidate
};

/// Relative tolerance under which two expected entropies count as tied; ties
/// resolve to the smaller separation.
inline constexpr double kSelectionTieTolerance = 1e-12;

/// One-step lookahead: the candidate minimising expected posterior entropy.
Selection select_next(const Posterior& posterior);

/// As above over an arbitrary candidate set (likelihoods evaluated directly
/// when it differs from the model's own set).
Selection select_next(const Posterior& posterior, const CandidateSet& candidates);

struct Postmean {
  CurveSamples curve;  // se holds the posterior standard deviation of psi(x)
  double expected_a = 0.0;
  double expected_b = 0.0;
  double expected_gamma = 0.0;
};

Postmean postmean_curve(const Posterior& posterior, std::span<const double> xs);

/// Marginal posterior mass on each a, b and gamma grid value.
struct Marginals {
  std::vector<double> a;
  std::vector<double> b;
  std::vector<double> gamma;
};

Marginals marginals(const Posterior& posterior);

}  // namespace vibropsi
