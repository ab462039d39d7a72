#include <cmath>
#include <random>

#include "doctest.h"
#include "reference_tables.hpp"
#include "tigload/errors.hpp"
#include "tigload/router.hpp"

using namespace tigload;
using namespace tigload::testing;

namespace {

CognitiveProfile profile(std::string id, double k, double b) {
  CognitiveProfile p;
  p.agent_id = std::move(id);
  p.k = k;
  p.b = b;
  return p;
}

}  // namespace

TEST_CASE("single agent") {
  RoutingPolicy policy;
  policy.costs = {{"solo", 3.0}};
  const auto d = route("t1", {{"solo", 7.0}}, {{"solo", profile("solo", 0.1, 0.2)}}, policy);
  CHECK(d.agent_id == "solo");
  CHECK(d.task_id == "t1");
  CHECK(d.predicted_accuracy == doctest::Approx(std::exp(-0.9)));
  CHECK(!d.rationale.empty());
}

TEST_CASE("ties go to the cheaper agent, then the smaller id") {
  RoutingPolicy policy;
  policy.costs = {{"a", 2.0}, {"b", 1.0}};
  const std::map<std::string, CognitiveProfile> profiles{{"a", profile("a", 0.05, 0.5)},
                                                         {"b", profile("b", 0.05, 0.5)}};
  CHECK(route("t", {{"a", 4.0}, {"b", 4.0}}, profiles, policy).agent_id == "b");
  policy.costs["a"] = 1.0;
  CHECK(route("t", {{"a", 4.0}, {"b", 4.0}}, profiles, policy).agent_id == "a");
}

TEST_CASE("published profiles at load 20") {
  RoutingPolicy policy;
  policy.costs = {{"xlam2", 1.0}, {"gpt4o", 1.0}};
  const std::map<std::string, CognitiveProfile> profiles{
      {"xlam2", profile("xlam2", kXlamK, kXlamB)}, {"gpt4o", profile("gpt4o", kGpt4oK, kGpt4oB)}};
  const auto d = route("t", {{"xlam2", 20.0}, {"gpt4o", 20.0}}, profiles, policy);
  CHECK(d.agent_id == "xlam2");
  CHECK(d.predicted_accuracy == doctest::Approx(0.14956861922263506).epsilon(1e-12));
  CHECK(predict_accuracy(kGpt4oK, kGpt4oB, 20.0) ==
        doctest::Approx(0.04735892439114093).epsilon(1e-12));
}

TEST_CASE("routing properties on random agent pools") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> k(0.01, 0.2), b(0.0, 2.0), load(0.0, 40.0),
      cost(0.0, 5.0), thr(0.05, 0.95);
  for (int rep = 0; rep < 500; ++rep) {
    std::map<std::string, CognitiveProfile> profiles;
    std::map<std::string, double> loads;
    RoutingPolicy policy;
    const int n = 1 + int(rng() % 5);
    for (int i = 0; i < n; ++i) {
      const std::string id = "agent" + std::to_string(i);
      profiles[id] = profile(id, k(rng), b(rng));
      loads[id] = load(rng);
      policy.costs[id] = std::round(cost(rng));
    }

    // Argmax invariance: k*L + b is a strictly increasing transform of
    // -log(accuracy), so picking the smallest exponent must agree.
    const auto best = route("t", loads, profiles, policy);
    std::string manual;
    double lowest = 1e300;
    for (const auto& [id, p] : profiles) {
      const double e = p.k * loads[id] + p.b;
      if (e < lowest - 1e-15 ||
          (std::abs(e - lowest) <= 1e-15 && policy.costs[id] < policy.costs[manual])) {
        lowest = e;
        manual = id;
      }
    }
    CHECK(best.agent_id == manual);

    policy.kind = RoutingPolicy::Kind::CheapestAboveThreshold;
    policy.threshold = thr(rng);
    const auto cheap = route("t", loads, profiles, policy);
    bool any = false;
    for (const auto& [id, p] : profiles)
      any = any || predict_accuracy(p.k, p.b, loads[id]) >= policy.threshold;
    if (any) {
      CHECK(cheap.predicted_accuracy >= policy.threshold);
      for (const auto& [id, p] : profiles)
        if (predict_accuracy(p.k, p.b, loads[id]) >= policy.threshold)
          CHECK(policy.costs[cheap.agent_id] <= policy.costs[id]);
    } else {
      CHECK(cheap.agent_id == best.agent_id);
      CHECK(cheap.rationale.find("fell back") != std::string::npos);
    }
  }
}

TEST_CASE("routing errors") {
  RoutingPolicy policy;
  policy.costs = {{"a", 1.0}};
  CHECK_THROWS_AS(route("t", {}, {}, policy), NoProfiles);
  CHECK_THROWS_AS(route("t", {{"b", 1.0}}, {{"a", profile("a", 0.1, 0.1)}}, policy), NoProfiles);
  CHECK_THROWS_AS(route("t", {{"c", 1.0}}, {{"c", profile("c", 0.1, 0.1)}}, policy), ConfigError);
  policy.kind = RoutingPolicy::Kind::CheapestAboveThreshold;
  for (double bad : {0.0, 1.0, -0.5, 2.0}) {
    policy.threshold = bad;
    CHECK_THROWS_AS(route("t", {{"a", 1.0}}, {{"a", profile("a", 0.1, 0.1)}}, policy),
                    ConfigError);
  }
}
