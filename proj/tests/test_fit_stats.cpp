#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "reference_tables.hpp"
#include "tigload/errors.hpp"
#include "tigload/fit_stats.hpp"
#include "tigload/oracle_sim.hpp"

using namespace tigload;
using namespace tigload::testing;

namespace {

struct Corpus {
  std::vector<TrialRecord> trials;
  LoadMap loads;
};

Corpus decay_corpus(double k, double b, std::size_t tasks, double max_load,
                    std::uint64_t seed) {
  Corpus c;
  std::vector<TaskLoad> loads;
  CounterRng rng(CounterRng::derive(seed, 1));
  for (std::size_t i = 0; i < tasks; ++i) {
    const std::string id = "task" + std::to_string(i);
    const double x = max_load * rng.uniform();
    loads.push_back({id, x});
    c.loads[id] = x;
  }
  c.trials = sample_task_level_trials(loads, k, b, "agent", seed, 1);
  return c;
}

}  // namespace

TEST_CASE("predict accuracy") {
  CHECK(predict_accuracy(kXlamK, kXlamB, 0.0) == doctest::Approx(0.2952301669240142).epsilon(1e-14));
  CHECK(predict_accuracy(kGpt4oK, kGpt4oB, 10.0) ==
        doctest::Approx(0.09255057751034329).epsilon(1e-14));
  double prev = 1.0;
  for (double x = 0.0; x < 2000.0; x += 25.0) {
    const double p = predict_accuracy(0.05, 0.5, x);
    CHECK(p > 0.0);
    CHECK(p <= prev);
    prev = p;
  }
  CHECK(predict_accuracy(0.05, 0.5, 1e6) < 1e-300);
  CHECK(predict_accuracy(0.2, 0.5, 3.0) < predict_accuracy(0.1, 0.5, 3.0));
  CHECK(predict_accuracy(0.1, 0.6, 3.0) < predict_accuracy(0.1, 0.5, 3.0));
  CHECK(predict_accuracy(0.1, 0.5, 3.5) < predict_accuracy(0.1, 0.5, 3.0));
  CHECK_THROWS_AS(predict_accuracy(0.0, 0.5, 1.0), DomainError);
  CHECK_THROWS_AS(predict_accuracy(0.1, -0.1, 1.0), DomainError);
  CHECK_THROWS_AS(predict_accuracy(0.1, 0.1, -1.0), DomainError);
}

TEST_CASE("fit recovers generator parameters") {
  const auto c = decay_corpus(0.067, 1.0, 5000, 40.0, 2024);
  const auto p = fit_profile(c.trials, c.loads);
  CHECK(p.agent_id == "agent");
  CHECK(std::abs(p.k - 0.067) <= 0.2 * 0.067);
  CHECK(std::abs(p.b - 1.0) <= 0.2);
  CHECK(p.fit_bins.size() == 10);
  std::size_t n = 0;
  for (const auto& bin : p.fit_bins) n += bin.n;
  CHECK(n == c.trials.size());

  const auto refined = fit_profile(c.trials, c.loads, {10, 5, 3, true});
  CHECK(std::abs(refined.k - 0.067) <= 0.2 * 0.067);
  CHECK(refined.residual_sse <= p.residual_sse + 1e-12);
}

TEST_CASE("fit is exact on noise-free bins") {
  for (auto [k, b] : {std::pair{0.05, 0.3}, {0.3, 0.0}, {1e-3, 2.0}}) {
    std::vector<LoadBin> bins;
    for (int i = 0; i < 8; ++i) {
      LoadBin bin;
      bin.lo = 2.0 * i;
      bin.hi = 2.0 * (i + 1);
      bin.load_mid = 2.0 * i + 1.0;
      bin.empirical_acc = std::exp(-(k * bin.load_mid + b));
      bin.n = 10 + 7 * i;
      bins.push_back(bin);
    }
    const auto fit = fit_decay(bins);
    CHECK(fit.k == doctest::Approx(k).epsilon(1e-9));
    CHECK(std::abs(fit.b - b) < 1e-9);
    CHECK(fit.sse < 1e-18);
  }
}

TEST_CASE("fit projects onto the feasible region") {
  auto make = [](std::vector<double> accs) {
    std::vector<LoadBin> bins;
    for (std::size_t i = 0; i < accs.size(); ++i) {
      LoadBin bin;
      bin.load_mid = double(i);
      bin.empirical_acc = accs[i];
      bin.n = 20;
      bins.push_back(bin);
    }
    return bins;
  };
  const auto rising = fit_decay(make({0.2, 0.4, 0.6, 0.8, 1.0}));
  CHECK(rising.k == kMinLoadSensitivity);
  CHECK(rising.b >= 0.0);
  // ln-accuracy line with a positive intercept: b would be negative.
  const auto lifted = fit_decay(make({1.0, 0.95, 0.9, 0.85}));
  CHECK(lifted.b == 0.0);
  CHECK(lifted.k > kMinLoadSensitivity);
  // Brute-force check of the projection on a grid.
  const auto bins = make({1.0, 0.95, 0.9, 0.85});
  double best = 1e300;
  for (double k = 0.0; k < 0.2; k += 1e-4) {
    double q = 0.0;
    for (const auto& bin : bins) {
      const double r = std::log(bin.empirical_acc) + k * bin.load_mid;
      q += 20.0 * r * r;
    }
    best = std::min(best, q);
  }
  double got = 0.0;
  for (const auto& bin : bins) {
    const double r = std::log(bin.empirical_acc) + lifted.k * bin.load_mid + lifted.b;
    got += 20.0 * r * r;
  }
  CHECK(got <= best + 1e-9);
}

TEST_CASE("fit invariances") {
  const auto c = decay_corpus(0.05, 0.5, 3000, 30.0, 7);
  const auto base = fit_profile(c.trials, c.loads);

  auto shuffled = c.trials;
  std::mt19937_64 rng(1);
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  const auto s = fit_profile(shuffled, c.loads);
  CHECK(s.k == base.k);
  CHECK(s.b == base.b);

  auto doubled = c.trials;
  doubled.insert(doubled.end(), c.trials.begin(), c.trials.end());
  const auto d = fit_profile(doubled, c.loads);
  CHECK(d.k == doctest::Approx(base.k).epsilon(1e-12));
  CHECK(d.b == doctest::Approx(base.b).epsilon(1e-12));
}

TEST_CASE("fit error cases") {
  LoadMap loads{{"a", 4.0}, {"b", 4.0}};
  std::vector<TrialRecord> same{{"a", "x", true}, {"b", "x", true}, {"a", "x", true}};
  CHECK_THROWS_AS(fit_profile(same, loads), DegenerateLoads);

  LoadMap two{{"a", 0.0}, {"b", 10.0}};
  std::vector<TrialRecord> few;
  for (int i = 0; i < 10; ++i) few.push_back({i % 2 ? "a" : "b", "x", i % 3 == 0});
  CHECK_THROWS_AS(fit_profile(few, two), InsufficientData);

  std::vector<TrialRecord> orphan{{"zzz", "x", true}};
  CHECK_THROWS_AS(fit_profile(orphan, two), UnmatchedTrial);
}

TEST_CASE("binning merges sparse bins") {
  LoadMap loads;
  std::vector<TrialRecord> trials;
  // 10 trials at loads 0 and 10, 2 in the middle, 1 at the sparse top.
  for (int i = 0; i < 10; ++i) {
    loads["lo" + std::to_string(i)] = 0.0;
    loads["mid" + std::to_string(i)] = 5.5;
    trials.push_back({"lo" + std::to_string(i), "x", true});
    trials.push_back({"mid" + std::to_string(i), "x", i < 5});
  }
  loads["s1"] = 2.5;
  loads["s2"] = 2.6;
  loads["top"] = 10.0;
  trials.push_back({"s1", "x", true});
  trials.push_back({"s2", "x", false});
  trials.push_back({"top", "x", false});
  const auto bins = bin_trials(trials, loads, {});
  REQUIRE(bins.size() == 2);
  CHECK(bins[0].n == 10);
  CHECK(bins[0].lo == 0.0);
  CHECK(bins[1].n == 13);  // s1, s2 roll right into the mid bin; top merges left
  CHECK(bins[1].lo == 2.0);
  CHECK(bins[1].hi == 10.0);
  CHECK(bins[1].load_mid == 6.0);
  CHECK(bins[1].successes == 6);
}

TEST_CASE("maximum-likelihood fit") {
  const auto c = decay_corpus(0.067, 1.0, 3000, 40.0, 77);
  FitOptions opts;
  opts.method = FitMethod::MaximumLikelihood;
  const auto prof = fit_profile(c.trials, c.loads, opts);
  CHECK(std::abs(prof.k - 0.067) <= 0.2 * 0.067);
  CHECK(std::abs(prof.b - 1.0) <= 0.2);

  // Oracle: brute-force log-likelihood over a fine grid around the optimum.
  auto ll = [&](double k, double b) {
    double s = 0.0;
    for (const auto& t : c.trials) {
      const double p = std::exp(-(k * c.loads.at(t.task_id) + b));
      s += t.success ? std::log(p) : std::log1p(-p);
    }
    return s;
  };
  const double best = ll(prof.k, prof.b);
  for (int i = -10; i <= 10; ++i)
    for (int j = -10; j <= 10; ++j) {
      const double k = prof.k + 0.0005 * i, b = prof.b + 0.01 * j;
      if (k > 0 && b >= 0) CHECK(ll(k, b) <= best + 1e-9);
    }

  // Boundary: accuracy that rises with load pins k to its floor.
  std::vector<TrialRecord> up;
  LoadMap loads;
  for (int i = 0; i < 40; ++i) {
    const std::string id = "u" + std::to_string(i);
    loads[id] = double(i);
    up.push_back({id, "a", i % 4 != 0 || i > 20});
  }
  const auto edge = fit_decay_trials(up, loads, {0.05, 0.5, 0.0});
  CHECK(edge.k == kMinLoadSensitivity);
  CHECK(edge.b >= 0.0);
  CHECK_THROWS_AS(fit_decay_trials({}, loads, {0.05, 0.5, 0.0}), InsufficientData);
  CHECK_THROWS_AS(fit_decay_trials(std::vector<TrialRecord>{{"nope", "a", true}}, loads,
                                   {0.05, 0.5, 0.0}),
                  UnmatchedTrial);
}

TEST_CASE("chi-square survival") {
  CHECK(chi2_survival(0.0, 1) == 1.0);
  CHECK(chi2_survival(0.0, 17) == 1.0);
  const std::vector<std::array<double, 3>> frozen = {
      {4.87, 8, 0.7713760937288181},    {10.47, 8, 0.23357417593041752},
      {13.15, 8, 0.10679174235149307},  {8.91, 8, 0.3499451028979098},
      {5.19, 8, 0.7370890844145768},    {13.21, 8, 0.10482553497764895},
      {7.50, 8, 0.4837673815536875},    {7.90, 8, 0.44329899327663136},
      {3.59, 8, 0.8920936173571024},    {0.5, 1, 0.47950012218695337},
      {1.0, 2, 0.6065306597126334},     {2.5, 3, 0.4752910833430205},
      {20.0, 8, 0.010336050675925726},  {50.0, 10, 2.669083424904495e-07},
      {0.1, 30, 1.0},                   {100.0, 50, 3.454931382984871e-05},
      {3.0, 1, 0.08326451666355042},    {1e-3, 4, 0.9999998750416589},
  };
  for (const auto& [x, dof, p] : frozen)
    CHECK_MESSAGE(std::abs(chi2_survival(x, int(dof)) - p) < 1e-8, x << " " << dof);

  for (const auto& [x, p] : kPublishedHL) CHECK(std::abs(chi2_survival(x, 8) - p) <= 0.01);

  for (int dof = 1; dof < 40; dof += 3) {
    double prev = 1.0;
    for (double x = 0.05; x < 120.0; x *= 1.3) {
      const double p = chi2_survival(x, dof);
      CHECK(p <= prev);
      CHECK(p >= 0.0);
      const double next = chi2_survival(x, dof + 1);
      CHECK(p <= next);
      if (p > 1e-12 && next < 1.0 - 1e-12) CHECK(p < next);
      prev = p;
    }
  }
  CHECK_THROWS_AS(chi2_survival(1.0, 0), DomainError);
}

TEST_CASE("Hosmer-Lemeshow") {
  SUBCASE("perfect calibration gives chi2 0") {
    std::vector<TrialRecord> trials;
    PredictionMap preds;
    for (int i = 0; i < 10; ++i) {
      const std::string id = "t" + std::to_string(i);
      const int wins = 2 * i + 1;  // out of 20: 0.05, 0.15, ...
      preds[id] = wins / 20.0;
      for (int j = 0; j < 20; ++j) trials.push_back({id, "a", j < wins});
    }
    const auto hl = hosmer_lemeshow(trials, preds);
    CHECK(hl.chi2 < 1e-20);
    CHECK(hl.p_value == 1.0);
    CHECK(hl.dof == 8);
    REQUIRE(hl.groups.size() == 10);
    CHECK(hl.groups[3].n == 20);
    CHECK(hl.groups[3].observed == 7);
  }
  SUBCASE("hand-computed statistic") {
    // Three groups of two: predictions 0.2, 0.5, 0.8 with 1, 1, 1 successes.
    std::vector<TrialRecord> trials{{"a", "x", true}, {"a", "x", false}, {"b", "x", true},
                                    {"b", "x", false}, {"c", "x", true}, {"c", "x", false}};
    PredictionMap preds{{"a", 0.2}, {"b", 0.5}, {"c", 0.8}};
    const auto hl = hosmer_lemeshow(trials, preds, 3);
    const double expect = 0.36 / 0.32 + 0.0 + 0.36 / 0.32;
    CHECK(hl.chi2 == doctest::Approx(expect).epsilon(1e-12));
    CHECK(hl.dof == 1);
    CHECK(hl.p_value == doctest::Approx(chi2_survival(expect, 1)).epsilon(1e-12));
  }
  SUBCASE("uneven group sizes") {
    std::vector<TrialRecord> trials;
    PredictionMap preds;
    for (int i = 0; i < 23; ++i) {
      preds["t" + std::to_string(i)] = 0.1 + 0.03 * i;
      trials.push_back({"t" + std::to_string(i), "x", i % 2 == 0});
    }
    const auto hl = hosmer_lemeshow(trials, preds);
    std::vector<std::size_t> sizes;
    for (const auto& g : hl.groups) sizes.push_back(g.n);
    CHECK(sizes == std::vector<std::size_t>{3, 3, 3, 2, 2, 2, 2, 2, 2, 2});
  }
  SUBCASE("errors") {
    std::vector<TrialRecord> trials{{"a", "x", true}, {"b", "x", true}, {"c", "x", false}};
    CHECK_THROWS_AS(hosmer_lemeshow(trials, {{"a", 0.5}, {"b", 0.5}, {"c", 0.5}}),
                    InsufficientData);
    CHECK_THROWS_AS(hosmer_lemeshow(trials, {{"a", 1.0}, {"b", 0.5}, {"c", 0.5}}, 3),
                    DegenerateGroup);
    CHECK_THROWS_AS(hosmer_lemeshow(trials, {{"a", 0.5}, {"b", 0.5}}, 3), UnmatchedTrial);
    CHECK_THROWS_AS(hosmer_lemeshow(trials, {{"a", 0.5}, {"b", 0.5}, {"c", 0.5}}, 2),
                    DomainError);
  }
}

TEST_CASE("calibration bins") {
  SUBCASE("single trial") {
    std::vector<TrialRecord> one{{"a", "x", true}};
    const auto bins = calibration_bins(one, {{"a", 0.5}});
    REQUIRE(bins.size() == 1);
    CHECK(bins[0].predicted_mean == 0.5);
    CHECK(bins[0].observed_acc == 1.0);
    CHECK(bins[0].n == 1);
  }
  SUBCASE("predictions equal to observed rates sit on the diagonal") {
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<double> u(0.02, 0.98);
    std::vector<TrialRecord> trials;
    PredictionMap truth, observed;
    std::map<std::string, std::size_t> wins;
    for (int i = 0; i < 100; ++i) {
      const std::string id = "t" + std::to_string(i);
      truth[id] = u(rng);
      std::bernoulli_distribution flip(truth[id]);
      for (int j = 0; j < 1000; ++j) {
        const bool s = flip(rng);
        wins[id] += s;
        trials.push_back({id, "x", s});
      }
      observed[id] = double(wins[id]) / 1000.0;
    }
    const auto exact = calibration_bins(trials, observed);
    std::size_t total = 0;
    for (const auto& b : exact) {
      total += b.n;
      CHECK(std::abs(b.predicted_mean - b.observed_acc) <= 1.0 / double(b.n));
    }
    CHECK(total == 100000);
    // Against the generating probabilities the gap is binomial noise.
    for (const auto& b : calibration_bins(trials, truth)) {
      const double sigma = std::sqrt(b.predicted_mean * (1 - b.predicted_mean) / double(b.n));
      CHECK(std::abs(b.predicted_mean - b.observed_acc) <= 4.0 * sigma + 0.01);
    }
  }
  SUBCASE("constant prediction") {
    std::mt19937_64 rng(9);
    std::bernoulli_distribution flip(0.3);
    std::vector<TrialRecord> trials;
    PredictionMap preds;
    for (int i = 0; i < 10000; ++i) {
      const std::string id = "t" + std::to_string(i);
      preds[id] = 0.3;
      trials.push_back({id, "x", flip(rng)});
    }
    const auto bins = calibration_bins(trials, preds);
    REQUIRE(bins.size() == 1);
    CHECK(bins[0].predicted_mean == doctest::Approx(0.3));
    CHECK(std::abs(bins[0].observed_acc - 0.3) <= 0.02);
    CHECK(bins[0].n == 10000);
  }
}
