#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace cil {

struct Prop1Config {
  std::size_t n = 4096;      // total samples
  std::size_t envs = 4096;   // |T|
  double sigma_r = 0.0444;   // spread of per-environment risks under the spurious mask
  double lambda_exp = 1.0;   // rate of the exponential over per-sample loss spreads
  double delta = 0.001;      // expected-risk gap: the invariant mask pays R̄ + delta per environment
  double lambda_rex = 1.0;   // REx penalty weight on the population variance
  double r_bar = 1.0;
  std::size_t trials = 2000;
  std::uint64_t seed = 0;
  bool shared_sigma = false;  // both masks reuse one drawn spread
  std::size_t jobs = 1;

  void validate() const;
};

Prop1Config prop1_from_json(const nlohmann::json& j);
nlohmann::json prop1_to_json(const Prop1Config& c);

// Raw draws of one trial for one mask.
struct MaskDraw {
  double sigma = 0.0;
  std::vector<double> expected;   // R^t
  std::vector<double> empirical;  // R̂^t
};

struct TrialDraw {
  MaskDraw invariant, spurious;
};

struct TrialLosses {
  double invariant = 0.0;  // L̂(Φ_v)
  double spurious = 0.0;   // L̂(Φ_s)
  bool failed() const { return invariant > spurious; }
};

struct Prop1Result {
  double fail_rate = 0.0;
  double ci_low = 0.0, ci_high = 0.0;  // 95% Wilson interval
  double std_error = 0.0;              // binomial Monte-Carlo standard error
  std::vector<TrialLosses> trials;
};

TrialDraw draw_trial(const Prop1Config& config, std::size_t trial);
// Σ_t R̂^t + λ_rex · population variance of R̂^t.
double rex_empirical_loss(const MaskDraw& draw, double lambda_rex);

Prop1Result simulate_rex_choice(const Prop1Config& config);

// Solves 1 − ½·exp(−λz) = q for z > 0; q must lie in (1/2, 1).
double g_inverse(double q, double lambda_exp);

// |T| at which the failure guarantee kicks in, reading the quantile as the upper-tail 1/4 point.
double prop1_threshold_envs(const Prop1Config& config);

struct Decomposition {
  double a0 = 0, a1 = 0, a2 = 0, a3 = 0, a4 = 0, a5 = 0, a6 = 0;
  double variance_weight = 0;  // λ_rex / |T|, multiplies the squared terms
  double expected_sum = 0;     // Σ_t R^t

  // Σ R^t − A1 + w·(A0 + A2 + A3 − A4 − A5 + A6)
  double reconstruct() const;
};

Decomposition decompose_terms(const MaskDraw& draw, double lambda_rex);

struct ScalingPoint {
  std::size_t envs = 0;
  double mean_sq_error = 0.0;  // mean over trials of Σ_t ε_t², ε_t = R^t − R̂^t
};

std::vector<ScalingPoint> estimation_error_scaling(const Prop1Config& base, const std::vector<std::size_t>& env_counts);
// Least-squares slope of log(mean_sq_error) on log(envs).
double loglog_slope(const std::vector<ScalingPoint>& points);

std::string prop1_csv_header();
std::string prop1_csv_row(const Prop1Config& config, const Prop1Result& result);

}  // namespace cil
