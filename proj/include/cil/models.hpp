#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "cil/autodiff.hpp"
#include "cil/dataset.hpp"
#include "json.hpp"

namespace cil {

enum class Activation { relu, identity };

struct MlpSpec {
  std::vector<std::size_t> widths;  // input, hidden..., output
  Activation hidden = Activation::relu;
  Activation output = Activation::identity;

  std::size_t inputs() const { return widths.front(); }
  std::size_t outputs() const { return widths.back(); }
  std::size_t layers() const { return widths.size() - 1; }
  void validate(const std::string& name) const;
};

struct Mlp {
  MlpSpec spec;
  std::vector<Tensor> weights;  // layer l: widths[l] × widths[l+1]
  std::vector<Tensor> biases;   // layer l: 1 × widths[l+1]

  std::size_t param_count() const;
  std::vector<Tensor*> params();
  std::vector<const Tensor*> params() const;
};

struct BundleSpec {
  MlpSpec phi, w, h, g;
  std::size_t classes = 2;

  void validate() const;
};

// Φ with the given hidden widths, a linear classifier head, and h/g with one hidden layer.
BundleSpec make_bundle_spec(std::size_t input_dim, std::size_t classes, std::size_t domain_dim,
                            const std::vector<std::size_t>& phi_hidden, std::size_t z_dim,
                            std::size_t penalty_hidden);

struct ModelBundle {
  Mlp phi, w, h, g;
  std::size_t classes = 2;

  BundleSpec spec() const { return {phi.spec, w.spec, h.spec, g.spec, classes}; }
  std::size_t param_count() const;
};

Mlp init_mlp(const MlpSpec& spec, std::uint64_t seed);
ModelBundle init_bundle(const BundleSpec& spec, std::uint64_t seed);

struct MlpVars {
  std::vector<Var> weights, biases;
  std::vector<Var> all() const;
};

MlpVars bind(Tape& tape, const Mlp& mlp, bool trainable);
Var mlp_forward(const Mlp& mlp, const MlpVars& vars, Var x);

struct BundleVars {
  MlpVars phi, w, h, g;
};

struct Trainable {
  bool phi = true, w = true, h = true, g = true;
};

BundleVars bind_bundle(Tape& tape, const ModelBundle& bundle, Trainable trainable = {});

struct BundleOutputs {
  Var logits, z, t_h, t_g;
};

BundleOutputs forward_bundle(Tape& tape, const ModelBundle& bundle, const BundleVars& vars, const Dataset& batch);

// Collects the gradients of a bound MLP after backward, in params() order.
std::vector<Tensor> gradients(const MlpVars& vars);

// Predicted class per row: binary heads threshold the logit at 0 (ties go to class 0),
// multi-class heads take the lowest-index argmax.
std::vector<std::uint32_t> predict_classes(const Tensor& logits);

struct FeatureMask {
  std::vector<std::uint8_t> bits;
  std::size_t invariant_count = 0;  // leading coordinates forming the invariant block
};

Tensor apply_mask(const FeatureMask& mask, const Tensor& x);

nlohmann::json params_to_json(const ModelBundle& bundle);
void params_from_json(ModelBundle& bundle, const nlohmann::json& j);

}  // namespace cil
