#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "cil/tensor.hpp"

namespace cil {

enum class OptimizerKind { sgd, adam };

std::string optimizer_name(OptimizerKind k);
OptimizerKind optimizer_from_name(const std::string& name);

// Applies in-place updates to a fixed, ordered parameter list.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads);
  // Ascent uses the same machinery on negated gradients.
  void ascend(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads);

 private:
  OptimizerKind kind_;
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

double l2_norm(const std::vector<Tensor>& grads);

}  // namespace cil
