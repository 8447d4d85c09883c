#pragma once

#include <random>
#include <string>
#include <vector>

#include "cil/gradcheck.hpp"
#include "cil/models.hpp"
#include "cil/objectives.hpp"
#include "cil/splitter.hpp"

namespace cil::testing {

inline Dataset random_batch(std::size_t n, std::size_t d, std::size_t classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> ut(0.0, 100.0);
  Dataset ds;
  std::vector<double> x(n * d), t(n);
  for (auto& v : x) v = nd(rng);
  for (auto& v : t) v = ut(rng);
  ds.x = Tensor::matrix(n, d, x);
  ds.t = Tensor::matrix(n, 1, t);
  for (std::size_t i = 0; i < n; ++i) ds.y.push_back(static_cast<std::uint32_t>(i % classes));
  std::shuffle(ds.y.begin(), ds.y.end(), rng);
  ds.meta.classes = classes;
  ds.finalize();
  return ds;
}

// Every parameter tensor of the bundle, in phi, w, h, g order.
inline std::vector<Tensor*> all_params(ModelBundle& b) {
  std::vector<Tensor*> out;
  for (Mlp* m : {&b.phi, &b.w, &b.h, &b.g})
    for (Tensor* p : m->params()) out.push_back(p);
  return out;
}

// Binds the bundle as constants except parameter `target`, which becomes `leaf`.
inline BundleVars bind_with(Tape& tape, const ModelBundle& b, std::size_t target, Var leaf) {
  BundleVars v;
  std::size_t k = 0;
  auto one = [&](const Mlp& m, MlpVars& out) {
    for (std::size_t l = 0; l < m.weights.size(); ++l) {
      out.weights.push_back(k++ == target ? leaf : tape.constant(m.weights[l]));
      out.biases.push_back(k++ == target ? leaf : tape.constant(m.biases[l]));
    }
  };
  one(b.phi, v.phi);
  one(b.w, v.w);
  one(b.h, v.h);
  one(b.g, v.g);
  return v;
}

enum class Objective { erm, irmv1, rex, groupdro, cil };

inline const char* objective_name(Objective o) {
  switch (o) {
    case Objective::erm: return "ERM";
    case Objective::irmv1: return "IRMv1";
    case Objective::rex: return "REx";
    case Objective::groupdro: return "GroupDRO";
    case Objective::cil: return "CIL";
  }
  return "?";
}

// Scalar objective as a function of one parameter tensor of the bundle.
inline ScalarFn objective_fn(Objective o, const ModelBundle& b, const Dataset& batch, const EnvBatches& envs,
                             std::size_t target) {
  return [o, &b, &batch, &envs, target](Tape& tape, Var p) -> Var {
    BundleVars v = bind_with(tape, b, target, p);
    BundleOutputs out = forward_bundle(tape, b, v, batch);
    switch (o) {
      case Objective::erm: return classification_loss(out.logits, batch);
      case Objective::irmv1: return irmv1_loss(out.logits, batch, envs, 3.0).total;
      case Objective::rex: return rex_loss(out.logits, batch, envs, 3.0).total;
      case Objective::groupdro: {
        // The weights are a constant of the descent step, so they are held fixed here.
        std::vector<double> q(envs.size());
        double mass = 0.0;
        for (std::size_t e = 0; e < q.size(); ++e) mass += (q[e] = 1.0 + static_cast<double>(e));
        for (double& v : q) v /= mass;
        return groupdro_loss(out.logits, batch, envs, q, 0.0).total;
      }
      case Objective::cil: {
        Tensor targets = batch.t;
        for (double& t : targets.mutable_data()) t /= 100.0;
        return cil_losses(tape, out, batch, targets, 2.0, UpdateRule::full_objective).main;
      }
    }
    return Var();
  };
}

// Largest relative gradient error over all parameters of the bundle at its current values.
inline double worst_objective_error(Objective o, ModelBundle& b, const Dataset& batch, const EnvBatches& envs) {
  double worst = 0.0;
  auto params = all_params(b);
  for (std::size_t k = 0; k < params.size(); ++k) {
    worst = std::max(worst, check_gradients(objective_fn(o, b, batch, envs, k), *params[k], 1e-5));
  }
  return worst;
}

inline void jitter(ModelBundle& b, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> nd(0.0, scale);
  for (Tensor* p : all_params(b))
    for (double& v : p->mutable_data()) v += nd(rng);
}

}  // namespace cil::testing
