#include "vibropsi/observer.hpp"

#include <cmath>
#include <string>

#include "vibropsi/error.hpp"

namespace vibropsi {

std::string_view to_string(ObserverKind k) {
  switch (k) {
    case ObserverKind::kIdeal: return "IDEAL";
    case ObserverKind::kFlat: return "FLAT";
    case ObserverKind::kSideBiased: return "SIDE_BIASED";
    case ObserverKind::kCustom: return "CUSTOM";
  }
  return "IDEAL";
}

ObserverKind observer_kind_from_string(std::string_view s) {
  if (s == "IDEAL") return ObserverKind::kIdeal;
  if (s == "FLAT") return ObserverKind::kFlat;
  if (s == "SIDE_BIASED") return ObserverKind::kSideBiased;
  if (s == "CUSTOM") return ObserverKind::kCustom;
  throw Error(ErrorCode::kInvalidArgument, "unknown observer kind '" + std::string(s) + "'");
}

void ObserverModel::validate() const {
  switch (kind) {
    case ObserverKind::kIdeal:
      truth.validate();
      break;
    case ObserverKind::kFlat:
      if (!(flat_rate > 0.0 && flat_rate < 1.0)) {
        throw Error(ErrorCode::kInvalidArgument, "flat observer rate must lie in (0, 1)");
      }
      break;
    case ObserverKind::kSideBiased:
      if (bias_side != 0 && bias_side != 1) {
        throw Error(ErrorCode::kInvalidArgument, "bias side must be option 0 or 1");
      }
      if (!(bias_strength >= 0.5 && bias_strength <= 1.0)) {
        throw Error(ErrorCode::kInvalidArgument, "bias strength must lie in [0.5, 1]");
      }
      break;
    case ObserverKind::kCustom:
      custom_curve.validate();
      if (custom_curve.x.empty()) throw Error(ErrorCode::kInvalidArgument, "custom curve is empty");
      break;
  }
  if (!(rt.median_ms > 0.0 && rt.sigma >= 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "response-time model needs median > 0 and sigma >= 0");
  }
  if (rt.preferred_median_ms && !(*rt.preferred_median_ms > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "preferred-side median must be positive");
  }
}

ObserverModel ObserverModel::ideal(WeibullParams truth) {
  ObserverModel m;
  m.kind = ObserverKind::kIdeal;
  m.truth = truth;
  return m;
}

ObserverModel ObserverModel::flat(double rate) {
  ObserverModel m;
  m.kind = ObserverKind::kFlat;
  m.flat_rate = rate;
  return m;
}

ObserverModel ObserverModel::side_biased(int side, double strength) {
  ObserverModel m;
  m.kind = ObserverKind::kSideBiased;
  m.bias_side = side;
  m.bias_strength = strength;
  return m;
}

double observer_accuracy(const ObserverModel& model, double separation) {
  switch (model.kind) {
    case ObserverKind::kIdeal: return eval_weibull(model.truth, separation);
    case ObserverKind::kFlat: return model.flat_rate;
    case ObserverKind::kCustom: return interpolate(model.custom_curve, separation);
    case ObserverKind::kSideBiased: break;
  }
  return 0.5;
}

Response respond(const ObserverModel& model, const Stimulus& stimulus, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double u = unit(rng);
  Response r;
  bool preferred = false;
  if (model.kind == ObserverKind::kSideBiased) {
    const auto options = choices_for(stimulus.task);
    const int side = u < model.bias_strength ? model.bias_side : 1 - model.bias_side;
    r.choice = options[static_cast<std::size_t>(side)];
    preferred = side == model.bias_side;
  } else {
    const bool correct = u < observer_accuracy(model, stimulus.separation);
    r.choice = correct ? stimulus.target : other_choice(stimulus.target);
  }
  double median = model.rt.median_ms;
  if (preferred && model.rt.preferred_median_ms) median = *model.rt.preferred_median_ms;
  if (model.rt.sigma > 0.0) {
    std::normal_distribution<double> log_rt(std::log(median), model.rt.sigma);
    r.response_time_ms = std::exp(log_rt(rng));
  } else {
    r.response_time_ms = median;
  }
  return r;
}

}  // namespace vibropsi
