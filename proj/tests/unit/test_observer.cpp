#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "oracles.hpp"
#include "vibropsi/error.hpp"
#include "vibropsi/observer.hpp"

using namespace vibropsi;

namespace {

double accuracy(const ObserverModel& m, double x, int draws, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  int correct = 0;
  for (int i = 0; i < draws; ++i) {
    const Choice target = i % 2 ? Choice::kFirstA : Choice::kFirstB;
    correct += respond(m, Stimulus{TaskKind::kVt2pd, x, target}, rng).choice == target;
  }
  return static_cast<double>(correct) / draws;
}

}  // namespace

TEST_SUITE("observer") {

TEST_CASE("ideal observer tracks its curve") {
  const WeibullParams truth{22.5, 3.0, 0.5, 0.02};
  const auto m = ObserverModel::ideal(truth);
  double prev = 0.0;
  for (double x : {2.5, 10.0, 17.5, 22.5, 30.0, 45.0}) {
    const double acc = accuracy(m, x, 10000, static_cast<std::uint64_t>(x * 10));
    CHECK(std::fabs(acc - oracle::weibull(22.5, 3.0, 0.5, 0.02, x)) < 0.02);
    CHECK(acc >= prev - 0.02);
    prev = acc;
  }
}

TEST_CASE("flat observer ignores separation") {
  const auto m = ObserverModel::flat(0.55);
  for (double x : {2.5, 22.5, 45.0}) CHECK(std::fabs(accuracy(m, x, 10000, 5) - 0.55) < 0.02);
}

TEST_CASE("fully side-biased observer always picks its side") {
  std::mt19937_64 rng(1);
  const auto left = ObserverModel::side_biased(0, 1.0);
  for (int i = 0; i < 200; ++i) {
    const Choice target = i % 3 ? Choice::kFirstA : Choice::kFirstB;
    CHECK(respond(left, Stimulus{TaskKind::kVt2pd, 10.0, target}, rng).choice == Choice::kFirstA);
  }
  const auto vertical = ObserverModel::side_biased(1, 1.0);
  CHECK(respond(vertical, Stimulus{TaskKind::kVt2pod, 10.0, Choice::kHorizontal}, rng).choice ==
        Choice::kVertical);
}

TEST_CASE("side-biased observer answers its side at the set rate") {
  std::mt19937_64 rng(4);
  const auto m = ObserverModel::side_biased(0, 0.8);
  int left = 0;
  for (int i = 0; i < 10000; ++i) {
    left += respond(m, Stimulus{TaskKind::kVt2pd, 10.0, i % 2 ? Choice::kFirstA : Choice::kFirstB}, rng).choice ==
            Choice::kFirstA;
  }
  CHECK(std::fabs(left / 10000.0 - 0.8) < 0.02);
}

TEST_CASE("custom observer interpolates its curve") {
  ObserverModel m;
  m.kind = ObserverKind::kCustom;
  m.custom_curve = CurveSamples{{0, 45}, {0.5, 0.9}, std::nullopt};
  CHECK(observer_accuracy(m, 22.5) == doctest::Approx(0.7));
  CHECK(std::fabs(accuracy(m, 22.5, 10000, 8) - 0.7) < 0.02);
}

TEST_CASE("response times are log-normal") {
  const auto m = ObserverModel::ideal({22.5, 3.0, 0.5, 0.02});
  std::mt19937_64 rng(6);
  std::vector<double> logs;
  for (int i = 0; i < 10000; ++i) {
    logs.push_back(std::log(respond(m, Stimulus{TaskKind::kVt2pd, 10.0, Choice::kFirstA}, rng).response_time_ms));
  }
  CHECK(std::exp(oracle::mean(logs)) == doctest::Approx(900.0).epsilon(0.02));
  CHECK(oracle::sample_sd(logs) == doctest::Approx(0.4).epsilon(0.03));
}

TEST_CASE("preferred-side response time shift") {
  auto m = ObserverModel::side_biased(0, 1.0);
  m.rt.sigma = 0.0;
  m.rt.preferred_median_ms = 500.0;
  std::mt19937_64 rng(1);
  CHECK(respond(m, Stimulus{TaskKind::kVt2pd, 10.0, Choice::kFirstB}, rng).response_time_ms == 500.0);
}

TEST_CASE("seeded determinism") {
  const auto m = ObserverModel::flat(0.6);
  std::mt19937_64 a(17), b(17);
  for (int i = 0; i < 100; ++i) {
    const Stimulus s{TaskKind::kVt2pd, 5.0 + i % 7, i % 2 ? Choice::kFirstA : Choice::kFirstB};
    const Response x = respond(m, s, a), y = respond(m, s, b);
    CHECK(x.choice == y.choice);
    CHECK(x.response_time_ms == y.response_time_ms);
  }
}

TEST_CASE("validation") {
  CHECK_THROWS_AS(ObserverModel::flat(1.0).validate(), Error);
  CHECK_THROWS_AS(ObserverModel::side_biased(0, 0.4).validate(), Error);
  CHECK_THROWS_AS(ObserverModel::side_biased(2, 0.8).validate(), Error);
  CHECK_THROWS_AS(ObserverModel::ideal({22.5, 3.0, 0.99, 0.02}).validate(), Error);
  CHECK_NOTHROW(ObserverModel::ideal({22.5, 3.0, 0.5, 0.02}).validate());
  CHECK(observer_kind_from_string("SIDE_BIASED") == ObserverKind::kSideBiased);
  CHECK(to_string(ObserverKind::kFlat) == "FLAT");
  CHECK_THROWS_AS(observer_kind_from_string("ROBOT"), Error);
}

}  // TEST_SUITE
