#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cil/autodiff.hpp"
#include "cil/dataset.hpp"
#include "cil/models.hpp"

namespace cil {

enum class Method { erm, irmv1, rex, groupdro, cil };
enum class SplitKind { equal, quantile };

std::string method_name(Method m);
Method method_from_name(const std::string& name);
bool env_based(Method m);

struct PenaltySpec {
  Method method = Method::erm;
  double lambda = 0.0;
  std::optional<std::size_t> split;
  SplitKind split_kind = SplitKind::equal;
  double eta_q = 0.01;
  std::size_t penalty_step = 0;

  void validate() const;
};

// Cross-entropy matching the head: binary for a single logit column, softmax otherwise.
Var classification_loss(Var logits, const Dataset& batch);
Var classification_loss(Var logits, std::span<const std::uint32_t> labels, std::size_t classes);

Var erm_loss(Tape& tape, const ModelBundle& bundle, const BundleVars& vars, const Dataset& batch);

// Sample indices per environment within a batch.
using EnvBatches = std::vector<std::vector<std::size_t>>;

struct EnvRisks {
  std::vector<Var> risks;             // one per nonempty environment
  std::vector<std::size_t> env_ids;   // environment id of each risk
  std::size_t skipped = 0;            // empty environments
};

EnvRisks env_risks(Var logits, const Dataset& batch, const EnvBatches& envs);

struct PenalizedLoss {
  Var total;
  double penalty = 0.0;
  std::size_t skipped = 0;
};

// Sum of environment risks plus lambda times their population variance.
PenalizedLoss rex_loss(Var logits, const Dataset& batch, const EnvBatches& envs, double lambda);

// d/ds of the mean loss of s·logits at s = 1, as a tape primitive.
Var irm_scale_gradient(Var logits, const Dataset& batch);

// Sum of environment risks plus lambda times the summed squared scale gradients.
PenalizedLoss irmv1_loss(Var logits, const Dataset& batch, const EnvBatches& envs, double lambda);

struct GroupDroLoss {
  Var total;
  std::vector<double> q;  // updated weights, indexed by environment id
  std::size_t skipped = 0;
};

// Exponentiated-gradient reweighting over environments; empty environments keep their weight.
GroupDroLoss groupdro_loss(Var logits, const Dataset& batch, const EnvBatches& envs, std::vector<double> q,
                           double eta_q);

enum class UpdateRule { algorithm1, full_objective, conditional_adversary };

std::string rule_name(UpdateRule r);
UpdateRule rule_from_name(const std::string& name);

struct CilLosses {
  Var main;         // loss for the descent player (w, Φ)
  Var gmax;         // mean ‖g(Φ(x),y) − t‖²
  Var h_term;       // mean ‖h(Φ(x)) − t‖²
  Var erm;
  double penalty_gap = 0.0;  // h_term − gmax
};

// targets is the (possibly standardized) n×d_t domain index matrix of the batch.
CilLosses cil_losses(Tape& tape, const BundleOutputs& out, const Dataset& batch, const Tensor& targets, double lambda,
                     UpdateRule rule);

// Finite joint table over (z, y, t); prob is laid out [z][y][t].
struct TabularDist {
  std::vector<double> t_values;
  std::size_t z_count = 0, y_count = 0;
  std::vector<double> prob;

  double p(std::size_t z, std::size_t y, std::size_t t) const {
    return prob[(z * y_count + y) * t_values.size() + t];
  }
  void validate() const;
};

struct ConditionalMeans {
  std::vector<std::optional<double>> h;  // E[t | z], per z
  std::vector<std::optional<double>> g;  // E[t | z, y], indexed z * y_count + y
};

ConditionalMeans conditional_mean_oracle(const TabularDist& dist);
// E[Var(t | z)] − E[Var(t | z, y)] over positive-mass cells.
double cil_penalty_oracle(const TabularDist& dist);

}  // namespace cil
