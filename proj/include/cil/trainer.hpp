#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "cil/dataset.hpp"
#include "cil/errors.hpp"
#include "cil/models.hpp"
#include "cil/objectives.hpp"
#include "cil/optim.hpp"
#include "cil/splitter.hpp"

namespace cil {

struct TrainConfig {
  double lr = 1e-3;
  double olr = 1e-3;
  std::size_t steps = 1500;
  std::size_t penalty_step = 500;
  double lambda = 1e4;
  std::size_t batch_size = 0;  // 0 means full batch
  OptimizerKind optimizer = OptimizerKind::adam;
  std::uint64_t seed = 0;
  UpdateRule rule = UpdateRule::algorithm1;
  bool standardize_t = true;  // regress h and g onto z-scored domain indices
  std::size_t probes = 1;       // suboptimality restarts at the end of training, 0 to skip
  std::size_t probe_steps = 100;

  void validate() const;
};

constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

struct StepRecord {
  std::size_t step = 0;
  double erm = kMissing;
  double penalty = kMissing;
  double h_loss = kMissing;
  double g_loss = kMissing;
  double grad_norm_descent = kMissing;
  double grad_norm_ascent = kMissing;
  std::size_t skipped_envs = 0;
  std::vector<double> q;
};

struct RunHistory {
  std::vector<StepRecord> steps;
  double eps1 = kMissing;
  double eps2 = kMissing;
  double wall_seconds = 0.0;

  // One JSON object per step; wall time is deliberately left out so reruns compare byte for byte.
  std::string to_jsonl() const;
};

struct TrainResult {
  ModelBundle bundle;
  RunHistory history;
};

class DivergenceError : public Error {
 public:
  DivergenceError(std::size_t step, ModelBundle last_finite)
      : Error("training diverged at step " + std::to_string(step)), step_(step), last_(std::move(last_finite)) {}
  std::size_t step() const { return step_; }
  const ModelBundle& last_finite() const { return last_; }

 private:
  std::size_t step_;
  ModelBundle last_;
};

// Standardization applied to domain indices before regression.
struct TargetScaler {
  std::vector<double> mean, scale;
  static TargetScaler fit(const Tensor& t, bool enabled);
  Tensor apply(const Tensor& t) const;
};

TrainResult sgda_train(const Dataset& data, ModelBundle bundle, const TrainConfig& config);

TrainResult sgd_train(const Dataset& data, ModelBundle bundle, const PenaltySpec& spec, const TrainConfig& config,
                      const EnvAssignment* envs = nullptr);

struct Evaluation {
  double accuracy = 0.0;
  double mean_loss = 0.0;
};

Evaluation evaluate(const ModelBundle& bundle, const Dataset& data);

struct Suboptimality {
  double eps1 = 0.0;
  double eps2 = 0.0;
};

// A min-max problem over two parameter groups, evaluated on a fresh tape.
struct SaddleProblem {
  std::vector<Tensor> min_params;
  std::vector<Tensor> max_params;
  std::function<Var(Tape&, const std::vector<Var>& min_vars, const std::vector<Var>& max_vars)> objective;
};

struct ProbeConfig {
  std::size_t steps = 100;
  double lr = 1e-3;
  double jitter = 1e-2;  // restart perturbation scale; the first restart is unperturbed
  std::uint64_t seed = 0;
};

Suboptimality estimate_saddle_gaps(const SaddleProblem& problem, std::size_t probes, const ProbeConfig& probe);

// (w, Φ, h) form the min player and g the max player of the soft CIL objective.
Suboptimality estimate_suboptimality(const ModelBundle& bundle, const Dataset& data, const TrainConfig& config,
                                     std::size_t probes);

}  // namespace cil
