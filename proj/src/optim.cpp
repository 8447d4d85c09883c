#include "cil/optim.hpp"

#include <cmath>

#include "cil/errors.hpp"

namespace cil {

std::string optimizer_name(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

OptimizerKind optimizer_from_name(const std::string& name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "adam") return OptimizerKind::adam;
  throw SchemaError("train.optimizer", "unknown optimizer '" + name + "'");
}

Optimizer::Optimizer(OptimizerKind kind, double lr, double beta1, double beta2, double eps)
    : kind_(kind), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  if (!(lr > 0)) throw ValidationError("learning rate must be positive");
}

void Optimizer::step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads) {
  if (params.size() != grads.size()) throw DimensionError("optimizer got mismatched parameter and gradient lists");
  if (kind_ == OptimizerKind::sgd) {
    for (std::size_t p = 0; p < params.size(); ++p) {
      auto& w = params[p]->mutable_data();
      auto g = grads[p].data();
      if (w.size() != g.size()) throw DimensionError("gradient shape does not match parameter");
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr_ * g[i];
    }
    return;
  }
  if (m_.empty()) {
    for (const auto* p : params) {
      m_.emplace_back(p->size(), 0.0);
      v_.emplace_back(p->size(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw ContractError("optimizer reused with a different parameter list");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& w = params[p]->mutable_data();
    auto g = grads[p].data();
    if (w.size() != g.size() || m_[p].size() != w.size()) throw DimensionError("gradient shape does not match parameter");
    for (std::size_t i = 0; i < w.size(); ++i) {
      m_[p][i] = beta1_ * m_[p][i] + (1.0 - beta1_) * g[i];
      v_[p][i] = beta2_ * v_[p][i] + (1.0 - beta2_) * g[i] * g[i];
      w[i] -= lr_ * (m_[p][i] / c1) / (std::sqrt(v_[p][i] / c2) + eps_);
    }
  }
}

void Optimizer::ascend(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads) {
  std::vector<Tensor> neg;
  neg.reserve(grads.size());
  for (const auto& g : grads) {
    std::vector<double> v(g.data().begin(), g.data().end());
    for (auto& x : v) x = -x;
    neg.emplace_back(g.shape(), std::move(v), Tensor::NonFinite::allow);
  }
  step(params, neg);
}

double l2_norm(const std::vector<Tensor>& grads) {
  double s = 0.0;
  for (const auto& g : grads)
    for (double v : g.data()) s += v * v;
  return std::sqrt(s);
}

}  // namespace cil
