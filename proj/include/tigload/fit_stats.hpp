#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tigload/trial.hpp"

namespace tigload {

// Task id -> CL_Total (for fitting) or predicted success probability.
using LoadMap = std::map<std::string, double>;
using PredictionMap = std::map<std::string, double>;

struct LoadBin {
  double lo = 0.0;        // interval covered, merged bins included
  double hi = 0.0;
  double load_mid = 0.0;  // (lo + hi) / 2, the regressor
  double empirical_acc = 0.0;
  std::size_t n = 0;
  std::size_t successes = 0;
};

enum class FitMethod {
  BinnedLeastSquares,  // weighted LS of ln(bin accuracy)
  MaximumLikelihood,   // Bernoulli likelihood of the individual trials
};

struct FitOptions {
  std::size_t n_bins = 10;
  std::size_t min_bin_count = 5;  // sparser bins merge into the next one
  std::size_t min_bins = 3;
  bool nonlinear_refine = false;
  FitMethod method = FitMethod::BinnedLeastSquares;
};

struct DecayFit {
  double k = 0.0;
  double b = 0.0;
  double sse = 0.0;  // sum over bins of (acc - predicted)^2
};

struct CognitiveProfile {
  std::string agent_id;
  double k = 0.0;  // load sensitivity
  double b = 0.0;  // baseline load
  std::vector<LoadBin> fit_bins;
  double residual_sse = 0.0;
};

inline constexpr double kMinLoadSensitivity = 1e-6;

// exp(-(k * cl_total + b)). Throws DomainError unless k > 0, b >= 0 and
// cl_total >= 0.
double predict_accuracy(double k, double b, double cl_total);

// Equal-width bins over the observed load range. Empty bins are dropped and
// bins holding fewer than min_bin_count trials are merged rightward (a sparse
// tail merges into its left neighbour). Throws UnmatchedTrial, DegenerateLoads.
std::vector<LoadBin> bin_trials(std::span<const TrialRecord> trials,
                                const LoadMap& loads, const FitOptions& opts);

// Count-weighted least squares of ln(acc) on load, with zero-success bins
// lifted to 0.5/n, projected onto k >= kMinLoadSensitivity and b >= 0.
// Optionally refined by projected Gauss-Newton in probability space.
DecayFit fit_decay(std::span<const LoadBin> bins, bool nonlinear_refine = false);

// Maximizes the Bernoulli log-likelihood of the trials under
// p = exp(-(k * load + b)) by projected Fisher scoring from `start`, keeping
// k >= kMinLoadSensitivity and b >= 0. The sse member is left at 0. Throws
// UnmatchedTrial and InsufficientData.
DecayFit fit_decay_trials(std::span<const TrialRecord> trials, const LoadMap& loads,
                          DecayFit start);

// bin_trials + fit_decay, then fit_decay_trials for FitMethod::MaximumLikelihood. Throws InsufficientData when fewer than
// opts.min_bins bins remain. The agent id defaults to that of the first trial.
CognitiveProfile fit_profile(std::span<const TrialRecord> trials,
                             const LoadMap& loads, const FitOptions& opts = {},
                             std::string agent_id = {});

struct HLGroup {
  std::size_t n = 0;
  std::size_t observed = 0;  // successes
  double expected = 0.0;     // n * mean prediction
  double mean_prediction = 0.0;
};

struct HLResult {
  double chi2 = 0.0;
  int dof = 0;
  double p_value = 1.0;
  std::vector<HLGroup> groups;
};

// Hosmer-Lemeshow test over `groups` near-equal groups of trials sorted by
// predicted probability, dof = groups - 2. Throws UnmatchedTrial,
// InsufficientData (fewer trials than groups), DegenerateGroup (a group mean
// prediction of exactly 0 or 1) and DomainError (groups < 3).
HLResult hosmer_lemeshow(std::span<const TrialRecord> trials,
                         const PredictionMap& predictions,
                         std::size_t groups = 10);

// Regularized upper incomplete gamma Q(a, x), series below x = a + 1 and a
// Lentz continued fraction above.
double regularized_gamma_q(double a, double x);

// Upper tail of the chi-square distribution: Q(dof / 2, x / 2).
double chi2_survival(double x, int dof);

struct CalibrationBin {
  double predicted_mean = 0.0;
  double observed_acc = 0.0;
  std::size_t n = 0;
};

// Equal-width bins on the predicted probability; non-empty bins only,
// ascending. Throws UnmatchedTrial.
std::vector<CalibrationBin> calibration_bins(std::span<const TrialRecord> trials,
                                             const PredictionMap& predictions,
                                             std::size_t n_bins = 10);

}  // namespace tigload
