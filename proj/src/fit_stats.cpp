#include "tigload/fit_stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "tigload/errors.hpp"

namespace tigload {

double predict_accuracy(double k, double b, double cl_total) {
  if (!(k > 0.0) || !(b >= 0.0) || !(cl_total >= 0.0) || !std::isfinite(k) ||
      !std::isfinite(b))
    throw DomainError("predict_accuracy needs k > 0, b >= 0, load >= 0");
  return std::exp(-(k * cl_total + b));
}

namespace {

double lookup(const std::map<std::string, double>& m, const std::string& id,
              const char* what) {
  auto it = m.find(id);
  if (it == m.end())
    throw UnmatchedTrial(std::string("trial references task '") + id +
                         "' which has no " + what);
  return it->second;
}

double objective(std::span<const double> x, std::span<const double> y,
                 std::span<const double> w, double k, double b) {
  double q = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] + b + k * x[i];
    q += w[i] * r * r;
  }
  return q;
}

double sse(std::span<const LoadBin> bins, double k, double b) {
  double s = 0.0;
  for (const auto& bin : bins) {
    const double r = bin.empirical_acc - std::exp(-(k * bin.load_mid + b));
    s += r * r;
  }
  return s;
}

// Minimizes sum n (acc - exp(-(k x + b)))^2 from a feasible start.
void gauss_newton(std::span<const LoadBin> bins, double& k, double& b) {
  for (int iter = 0; iter < 100; ++iter) {
    // Normal equations J^T W J d = -J^T W r for parameters (k, b).
    double a11 = 0, a12 = 0, a22 = 0, g1 = 0, g2 = 0;
    for (const auto& bin : bins) {
      const double w = static_cast<double>(bin.n);
      const double p = std::exp(-(k * bin.load_mid + b));
      const double r = p - bin.empirical_acc;
      const double jk = -bin.load_mid * p, jb = -p;
      a11 += w * jk * jk;
      a12 += w * jk * jb;
      a22 += w * jb * jb;
      g1 += w * jk * r;
      g2 += w * jb * r;
    }
    const double det = a11 * a22 - a12 * a12;
    if (!(std::abs(det) > 0.0)) return;
    const double dk = -(a22 * g1 - a12 * g2) / det;
    const double db = -(a11 * g2 - a12 * g1) / det;
    const double nk = std::max(k + dk, kMinLoadSensitivity);
    const double nb = std::max(b + db, 0.0);
    const bool done = std::abs(nk - k) < 1e-12 && std::abs(nb - b) < 1e-12;
    k = nk;
    b = nb;
    if (done) return;
  }
}

}  // namespace

std::vector<LoadBin> bin_trials(std::span<const TrialRecord> trials,
                                const LoadMap& loads, const FitOptions& opts) {
  if (opts.n_bins == 0) throw DomainError("n_bins must be positive");
  if (trials.empty()) throw InsufficientData("no trials to bin");

  std::vector<double> x;
  x.reserve(trials.size());
  for (const auto& t : trials) x.push_back(lookup(loads, t.task_id, "load"));
  const auto [lo_it, hi_it] = std::minmax_element(x.begin(), x.end());
  const double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) throw DegenerateLoads("all trial loads are equal");

  const std::size_t nb = opts.n_bins;
  const double width = (hi - lo) / static_cast<double>(nb);
  std::vector<std::size_t> count(nb, 0), wins(nb, 0);
  for (std::size_t i = 0; i < trials.size(); ++i) {
    auto idx = static_cast<std::size_t>(std::floor((x[i] - lo) / width));
    idx = std::min(idx, nb - 1);
    ++count[idx];
    if (trials[i].success) ++wins[idx];
  }

  auto edge = [&](std::size_t i) {
    return i == nb ? hi : lo + width * static_cast<double>(i);
  };
  auto finish = [](LoadBin bin) {
    bin.load_mid = 0.5 * (bin.lo + bin.hi);
    bin.empirical_acc =
        static_cast<double>(bin.successes) / static_cast<double>(bin.n);
    return bin;
  };

  std::vector<LoadBin> out;
  LoadBin pending;
  for (std::size_t i = 0; i < nb; ++i) {
    if (count[i] == 0) continue;
    if (pending.n == 0) pending.lo = edge(i);
    pending.hi = edge(i + 1);
    pending.n += count[i];
    pending.successes += wins[i];
    if (pending.n >= opts.min_bin_count) {
      out.push_back(finish(pending));
      pending = LoadBin{};
    }
  }
  if (pending.n > 0) {
    if (out.empty()) {
      out.push_back(finish(pending));
    } else {
      LoadBin merged = out.back();
      merged.hi = pending.hi;
      merged.n += pending.n;
      merged.successes += pending.successes;
      out.back() = finish(merged);
    }
  }
  return out;
}

DecayFit fit_decay(std::span<const LoadBin> bins, bool nonlinear_refine) {
  if (bins.size() < 2)
    throw InsufficientData("need at least two load bins to fit");
  std::vector<double> x, y, w;
  for (const auto& bin : bins) {
    if (bin.n == 0) throw InsufficientData("empty load bin");
    const double n = static_cast<double>(bin.n);
    x.push_back(bin.load_mid);
    y.push_back(std::log(std::max(bin.empirical_acc, 0.5 / n)));
    w.push_back(n);
  }

  const double sw = std::accumulate(w.begin(), w.end(), 0.0);
  double xm = 0, ym = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    xm += w[i] * x[i];
    ym += w[i] * y[i];
  }
  xm /= sw;
  ym /= sw;
  double sxx = 0, sxy = 0, sxx0 = 0, sxy0 = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += w[i] * (x[i] - xm) * (x[i] - xm);
    sxy += w[i] * (x[i] - xm) * (y[i] - ym);
    sxx0 += w[i] * x[i] * x[i];
    sxy0 += w[i] * x[i] * y[i];
  }
  if (!(sxx > 0.0)) throw DegenerateLoads("all bins share one load");

  // Candidate optima of the convex quadratic on each face of the feasible
  // box {k >= kmin, b >= 0}; the constrained optimum is among them.
  struct Candidate {
    double k, b;
  };
  std::vector<Candidate> cands;
  {
    const double k = -sxy / sxx;
    cands.push_back({k, -(ym + k * xm)});
  }
  if (sxx0 > 0.0) cands.push_back({-sxy0 / sxx0, 0.0});
  cands.push_back({kMinLoadSensitivity, -(ym + kMinLoadSensitivity * xm)});
  cands.push_back({kMinLoadSensitivity, 0.0});

  DecayFit best{cands[0].k, cands[0].b, 0.0};
  if (best.k < kMinLoadSensitivity || best.b < 0.0) {
    double best_q = std::numeric_limits<double>::infinity();
    for (const auto& c : cands) {
      const double k = std::max(c.k, kMinLoadSensitivity);
      const double b = std::max(c.b, 0.0);
      const double q = objective(x, y, w, k, b);
      if (q < best_q) {
        best_q = q;
        best = {k, b, 0.0};
      }
    }
  }

  if (nonlinear_refine) gauss_newton(bins, best.k, best.b);
  best.sse = sse(bins, best.k, best.b);
  return best;
}

namespace {

struct LoadCount {
  double load = 0.0;
  double n = 0.0;
  double successes = 0.0;
};

double log_likelihood(const std::vector<LoadCount>& data, double k, double b) {
  double ll = 0.0;
  for (const auto& d : data) {
    const double eta = k * d.load + b;
    ll -= d.successes * eta;
    if (d.n > d.successes) {
      if (!(eta > 0.0)) return -std::numeric_limits<double>::infinity();
      ll += (d.n - d.successes) * std::log(-std::expm1(-eta));
    }
  }
  return ll;
}

}  // namespace

DecayFit fit_decay_trials(std::span<const TrialRecord> trials, const LoadMap& loads,
                          DecayFit start) {
  if (trials.empty()) throw InsufficientData("no trials to fit");
  std::map<std::string, LoadCount> by_task;
  for (const auto& t : trials) {
    auto& d = by_task[t.task_id];
    d.load = lookup(loads, t.task_id, "load");
    d.n += 1.0;
    if (t.success) d.successes += 1.0;
  }
  std::vector<LoadCount> data;
  for (const auto& [id, d] : by_task) data.push_back(d);

  double k = std::max(start.k, kMinLoadSensitivity);
  double b = std::max(start.b, 0.0);
  double ll = log_likelihood(data, k, b);
  // A zero-load failure has no likelihood at b = 0.
  if (!std::isfinite(ll)) {
    b = std::max(b, 1e-6);
    ll = log_likelihood(data, k, b);
  }
  for (int iter = 0; iter < 200 && std::isfinite(ll); ++iter) {
    // Score and expected information in eta: n p / (1 - p) per task.
    double g1 = 0, g2 = 0, a11 = 0, a12 = 0, a22 = 0;
    for (const auto& d : data) {
      const double eta = std::max(k * d.load + b, 1e-12);
      const double odds = 1.0 / std::expm1(eta);  // p / (1 - p)
      const double s = -d.successes + (d.n - d.successes) * odds;
      const double info = d.n * odds;
      g1 += s * d.load;
      g2 += s;
      a11 += info * d.load * d.load;
      a12 += info * d.load;
      a22 += info;
    }
    const double det = a11 * a22 - a12 * a12;
    if (!(det > 0.0)) break;
    const double dk = (a22 * g1 - a12 * g2) / det;
    const double db = (a11 * g2 - a12 * g1) / det;
    bool moved = false;
    for (double step = 1.0; step > 1e-10; step *= 0.5) {
      const double nk = std::max(k + step * dk, kMinLoadSensitivity);
      const double nb = std::max(b + step * db, 0.0);
      const double nll = log_likelihood(data, nk, nb);
      if (nll > ll) {
        moved = std::abs(nk - k) > 1e-13 || std::abs(nb - b) > 1e-13;
        k = nk;
        b = nb;
        ll = nll;
        break;
      }
    }
    if (!moved) break;
  }
  return {k, b, 0.0};
}

CognitiveProfile fit_profile(std::span<const TrialRecord> trials,
                             const LoadMap& loads, const FitOptions& opts,
                             std::string agent_id) {
  auto bins = bin_trials(trials, loads, opts);
  if (bins.size() < std::max<std::size_t>(opts.min_bins, 2))
    throw InsufficientData("only " + std::to_string(bins.size()) +
                           " usable load bins, need " +
                           std::to_string(std::max<std::size_t>(opts.min_bins, 2)));
  auto fit = fit_decay(bins, opts.nonlinear_refine);
  if (opts.method == FitMethod::MaximumLikelihood) {
    fit = fit_decay_trials(trials, loads, fit);
    fit.sse = sse(bins, fit.k, fit.b);
  }
  CognitiveProfile p;
  p.agent_id = agent_id.empty() ? trials.front().agent_id : std::move(agent_id);
  p.k = fit.k;
  p.b = fit.b;
  p.fit_bins = std::move(bins);
  p.residual_sse = fit.sse;
  return p;
}

HLResult hosmer_lemeshow(std::span<const TrialRecord> trials,
                         const PredictionMap& predictions, std::size_t groups) {
  if (groups < 3) throw DomainError("Hosmer-Lemeshow needs at least 3 groups");
  if (trials.size() < groups)
    throw InsufficientData("Hosmer-Lemeshow needs at least as many trials (" +
                           std::to_string(trials.size()) + ") as groups (" +
                           std::to_string(groups) + ")");

  struct Unit {
    double p;
    std::size_t order;
    bool success;
  };
  std::vector<Unit> units;
  units.reserve(trials.size());
  for (std::size_t i = 0; i < trials.size(); ++i)
    units.push_back(
        {lookup(predictions, trials[i].task_id, "prediction"), i, trials[i].success});
  std::sort(units.begin(), units.end(), [](const Unit& a, const Unit& b) {
    return a.p != b.p ? a.p < b.p : a.order < b.order;
  });

  HLResult out;
  const std::size_t n = units.size(), base = n / groups, rem = n % groups;
  std::size_t start = 0;
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t size = base + (g < rem ? 1 : 0);
    HLGroup grp;
    grp.n = size;
    double psum = 0.0;
    for (std::size_t i = start; i < start + size; ++i) {
      psum += units[i].p;
      if (units[i].success) ++grp.observed;
    }
    start += size;
    grp.mean_prediction = psum / static_cast<double>(size);
    grp.expected = psum;
    const double pi = grp.mean_prediction;
    if (!(pi > 0.0 && pi < 1.0))
      throw DegenerateGroup("group " + std::to_string(g) +
                            " has mean prediction " + std::to_string(pi));
    const double diff = static_cast<double>(grp.observed) - grp.expected;
    out.chi2 += diff * diff / (static_cast<double>(size) * pi * (1.0 - pi));
    out.groups.push_back(grp);
  }
  out.dof = static_cast<int>(groups) - 2;
  out.p_value = chi2_survival(out.chi2, out.dof);
  return out;
}

double regularized_gamma_q(double a, double x) {
  if (!(a > 0.0)) throw DomainError("incomplete gamma needs a > 0");
  if (x <= 0.0) return 1.0;
  constexpr double eps = 1e-16;
  constexpr int max_iter = 10000;
  const double log_prefactor = a * std::log(x) - x - std::lgamma(a);

  if (x < a + 1.0) {
    // P(a, x) = x^a e^-x / Gamma(a + 1) * sum x^n / ((a+1)...(a+n))
    double ap = a, term = 1.0 / a, sum = term;
    for (int n = 0; n < max_iter; ++n) {
      ap += 1.0;
      term *= x / ap;
      sum += term;
      if (std::abs(term) < std::abs(sum) * eps) break;
    }
    const double p = sum * std::exp(log_prefactor);
    return std::clamp(1.0 - p, 0.0, 1.0);
  }

  // Modified Lentz evaluation of the continued fraction for Q(a, x).
  constexpr double tiny = 1e-300;
  double bcf = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / bcf;
  double h = d;
  for (int i = 1; i < max_iter; ++i) {
    const double an = -i * (i - a);
    bcf += 2.0;
    d = an * d + bcf;
    if (std::abs(d) < tiny) d = tiny;
    c = bcf + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < eps) break;
  }
  return std::clamp(std::exp(log_prefactor) * h, 0.0, 1.0);
}

double chi2_survival(double x, int dof) {
  if (dof < 1) throw DomainError("chi-square needs dof >= 1");
  if (!(x > 0.0)) return 1.0;
  return regularized_gamma_q(0.5 * dof, 0.5 * x);
}

std::vector<CalibrationBin> calibration_bins(std::span<const TrialRecord> trials,
                                             const PredictionMap& predictions,
                                             std::size_t n_bins) {
  if (n_bins == 0) throw DomainError("n_bins must be positive");
  std::vector<double> psum(n_bins, 0.0);
  std::vector<std::size_t> count(n_bins, 0), wins(n_bins, 0);
  for (const auto& t : trials) {
    const double p = lookup(predictions, t.task_id, "prediction");
    auto idx = static_cast<std::size_t>(
        std::floor(std::clamp(p, 0.0, 1.0) * static_cast<double>(n_bins)));
    idx = std::min(idx, n_bins - 1);
    psum[idx] += p;
    ++count[idx];
    if (t.success) ++wins[idx];
  }
  std::vector<CalibrationBin> out;
  for (std::size_t i = 0; i < n_bins; ++i) {
    if (count[i] == 0) continue;
    const double n = static_cast<double>(count[i]);
    out.push_back({psum[i] / n, static_cast<double>(wins[i]) / n, count[i]});
  }
  return out;
}

}  // namespace tigload
