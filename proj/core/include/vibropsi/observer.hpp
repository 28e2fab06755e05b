#pragma once

#include <optional>
#include <random>
#include <string_view>

#include "vibropsi/psymodel.hpp"
#include "vibropsi/task.hpp"

namespace vibropsi {

enum class ObserverKind { kIdeal, kFlat, kSideBiased, kCustom };

std::string_view to_string(ObserverKind k);
ObserverKind observer_kind_from_string(std::string_view s);

/// Log-normal response times.
struct ResponseTimeModel {
  double median_ms = 900.0;
  double sigma = 0.4;
  /// Side-biased observers answer their preferred option with this median
  /// when set.
  std::optional<double> preferred_median_ms;
};

struct ObserverModel {
  ObserverKind kind = ObserverKind::kIdeal;
  WeibullParams truth{22.5, 3.0, 0.5, 0.02};  // kIdeal
  double flat_rate = 0.55;                    // kFlat
  int bias_side = 0;                          // kSideBiased: preferred option index
  double bias_strength = 0.8;                 // kSideBiased
  CurveSamples custom_curve;                  // kCustom: accuracy by separation
  ResponseTimeModel rt;

  void validate() const;

  static ObserverModel ideal(WeibullParams truth);
  static ObserverModel flat(double rate);
  static ObserverModel side_biased(int side, double strength);
};

/// What a simulated participant is shown. The target is known to the
/// simulation only; live participants never receive it.
struct Stimulus {
  TaskKind task = TaskKind::kVt2pd;
  double separation = 0.0;
  Choice target = Choice::kFirstA;
  Orientation orientation = Orientation::kHorizontal;
};

struct Response {
  Choice choice = Choice::kFirstA;
  double response_time_ms = 0.0;
};

/// Probability that `model` answers correctly at `separation` (undefined for
/// side-biased observers, whose accuracy depends on the target).
double observer_accuracy(const ObserverModel& model, double separation);

/// Draw order: one uniform for the answer, then one normal for the response
/// time.
Response respond(const ObserverModel& model, const Stimulus& stimulus, std::mt19937_64& rng);

}  // namespace vibropsi
