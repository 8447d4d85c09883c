#include "cil/models.hpp"

#include <array>
#include <cmath>
#include <random>

#include "cil/errors.hpp"

namespace cil {

void MlpSpec::validate(const std::string& name) const {
  if (widths.size() < 2) throw SpecError(name + ": an MLP needs at least one layer");
  for (auto w : widths) {
    if (w < 1) throw SpecError(name + ": layer widths must be at least 1");
  }
}

std::size_t Mlp::param_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) n += weights[l].size() + biases[l].size();
  return n;
}

std::vector<Tensor*> Mlp::params() {
  std::vector<Tensor*> out;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    out.push_back(&weights[l]);
    out.push_back(&biases[l]);
  }
  return out;
}

std::vector<const Tensor*> Mlp::params() const {
  std::vector<const Tensor*> out;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    out.push_back(&weights[l]);
    out.push_back(&biases[l]);
  }
  return out;
}

void BundleSpec::validate() const {
  phi.validate("phi");
  w.validate("w");
  h.validate("h");
  g.validate("g");
  auto mismatch = [](const std::string& a, std::size_t wa, const std::string& b, std::size_t wb) {
    if (wa != wb) {
      throw SpecError(a + " width " + std::to_string(wa) + " does not match " + b + " width " + std::to_string(wb));
    }
  };
  mismatch("phi output", phi.outputs(), "w input", w.inputs());
  mismatch("phi output", phi.outputs(), "h input", h.inputs());
  mismatch("g input", g.inputs(), "phi output + classes", phi.outputs() + classes);
  mismatch("h output", h.outputs(), "g output", g.outputs());
  if (classes < 2) throw SpecError("classes must be at least 2");
  mismatch("w output", w.outputs(), "logit count", classes == 2 ? 1 : classes);
}

BundleSpec make_bundle_spec(std::size_t input_dim, std::size_t classes, std::size_t domain_dim,
                            const std::vector<std::size_t>& phi_hidden, std::size_t z_dim,
                            std::size_t penalty_hidden) {
  BundleSpec s;
  s.classes = classes;
  s.phi.widths.push_back(input_dim);
  s.phi.widths.insert(s.phi.widths.end(), phi_hidden.begin(), phi_hidden.end());
  s.phi.widths.push_back(z_dim);
  s.w.widths = {z_dim, classes == 2 ? 1 : classes};
  s.h.widths = {z_dim, penalty_hidden, domain_dim};
  s.g.widths = {z_dim + classes, penalty_hidden, domain_dim};
  s.validate();
  return s;
}

std::size_t ModelBundle::param_count() const {
  return phi.param_count() + w.param_count() + h.param_count() + g.param_count();
}

Mlp init_mlp(const MlpSpec& spec, std::uint64_t seed) {
  spec.validate("mlp");
  std::mt19937_64 rng(seed);
  Mlp m;
  m.spec = spec;
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    const std::size_t fan_in = spec.widths[l], fan_out = spec.widths[l + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> w(fan_in * fan_out);
    for (auto& v : w) v = dist(rng);
    m.weights.emplace_back(Shape{fan_in, fan_out}, std::move(w));
    m.biases.push_back(Tensor::zeros({1, fan_out}));
  }
  return m;
}

ModelBundle init_bundle(const BundleSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::seed_seq seq{seed, std::uint64_t{0x5eed}};
  std::vector<std::uint64_t> seeds(4);
  seq.generate(seeds.begin(), seeds.end());
  ModelBundle b;
  b.classes = spec.classes;
  b.phi = init_mlp(spec.phi, seeds[0]);
  b.w = init_mlp(spec.w, seeds[1]);
  b.h = init_mlp(spec.h, seeds[2]);
  b.g = init_mlp(spec.g, seeds[3]);
  return b;
}

std::vector<Var> MlpVars::all() const {
  std::vector<Var> out;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    out.push_back(weights[l]);
    out.push_back(biases[l]);
  }
  return out;
}

MlpVars bind(Tape& tape, const Mlp& mlp, bool trainable) {
  MlpVars v;
  for (std::size_t l = 0; l < mlp.weights.size(); ++l) {
    v.weights.push_back(tape.leaf(mlp.weights[l], trainable));
    v.biases.push_back(tape.leaf(mlp.biases[l], trainable));
  }
  return v;
}

Var mlp_forward(const Mlp& mlp, const MlpVars& vars, Var x) {
  if (x.value().cols() != mlp.spec.inputs()) {
    throw DimensionError("input width " + std::to_string(x.value().cols()) + " does not match MLP input width " +
                         std::to_string(mlp.spec.inputs()));
  }
  Var a = x;
  const std::size_t L = mlp.spec.layers();
  for (std::size_t l = 0; l < L; ++l) {
    a = add_row(matmul(a, vars.weights[l]), vars.biases[l]);
    const Activation act = (l + 1 == L) ? mlp.spec.output : mlp.spec.hidden;
    if (act == Activation::relu) a = relu(a);
  }
  return a;
}

BundleVars bind_bundle(Tape& tape, const ModelBundle& bundle, Trainable trainable) {
  return {bind(tape, bundle.phi, trainable.phi), bind(tape, bundle.w, trainable.w), bind(tape, bundle.h, trainable.h),
          bind(tape, bundle.g, trainable.g)};
}

BundleOutputs forward_bundle(Tape& tape, const ModelBundle& bundle, const BundleVars& vars, const Dataset& batch) {
  if (batch.dim() != bundle.phi.spec.inputs()) {
    throw DimensionError("batch width " + std::to_string(batch.dim()) + " does not match phi input width " +
                         std::to_string(bundle.phi.spec.inputs()));
  }
  if (batch.meta.classes != bundle.classes) {
    throw DimensionError("batch has " + std::to_string(batch.meta.classes) + " classes, bundle expects " +
                         std::to_string(bundle.classes));
  }
  BundleOutputs out;
  Var x = tape.constant(batch.x);
  out.z = mlp_forward(bundle.phi, vars.phi, x);
  out.logits = mlp_forward(bundle.w, vars.w, out.z);
  out.t_h = mlp_forward(bundle.h, vars.h, out.z);
  Var zy = concat_cols(out.z, tape.constant(batch.one_hot()));
  out.t_g = mlp_forward(bundle.g, vars.g, zy);
  return out;
}

std::vector<Tensor> gradients(const MlpVars& vars) {
  std::vector<Tensor> out;
  for (const Var& v : vars.all()) out.push_back(v.grad());
  return out;
}

std::vector<std::uint32_t> predict_classes(const Tensor& logits) {
  const std::size_t n = logits.rows(), k = logits.cols();
  std::vector<std::uint32_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (k == 1) {
      out[i] = logits(i, 0) > 0.0 ? 1u : 0u;
      continue;
    }
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (logits(i, j) > logits(i, best)) best = j;
    }
    out[i] = static_cast<std::uint32_t>(best);
  }
  return out;
}

Tensor apply_mask(const FeatureMask& mask, const Tensor& x) {
  const std::size_t d = x.rank() == 2 ? x.cols() : x.size();
  if (mask.bits.size() != d) {
    throw DimensionError("mask length " + std::to_string(mask.bits.size()) + " does not match feature width " +
                         std::to_string(d));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto bit = mask.bits[i % d];
    if (bit > 1) throw ValidationError("mask entries must be 0 or 1");
    if (bit == 0) out[i] = 0.0;
  }
  return Tensor(x.shape(), std::move(out));
}

namespace {

const char* part_names[] = {"phi", "w", "h", "g"};

template <class B>
auto parts(B& bundle) {
  return std::array{&bundle.phi, &bundle.w, &bundle.h, &bundle.g};
}

}  // namespace

nlohmann::json params_to_json(const ModelBundle& bundle) {
  nlohmann::json j = nlohmann::json::object();
  auto ps = parts(bundle);
  for (std::size_t p = 0; p < ps.size(); ++p) {
    const Mlp& m = *ps[p];
    for (std::size_t l = 0; l < m.weights.size(); ++l) {
      for (int kind = 0; kind < 2; ++kind) {
        const Tensor& t = kind == 0 ? m.weights[l] : m.biases[l];
        std::string name = std::string(part_names[p]) + (kind == 0 ? ".w" : ".b") + std::to_string(l);
        j[name] = {{"shape", t.shape()}, {"values", std::vector<double>(t.data().begin(), t.data().end())}};
      }
    }
  }
  return j;
}

void params_from_json(ModelBundle& bundle, const nlohmann::json& j) {
  auto ps = parts(bundle);
  for (std::size_t p = 0; p < ps.size(); ++p) {
    Mlp& m = *ps[p];
    for (std::size_t l = 0; l < m.weights.size(); ++l) {
      for (int kind = 0; kind < 2; ++kind) {
        Tensor& t = kind == 0 ? m.weights[l] : m.biases[l];
        std::string name = std::string(part_names[p]) + (kind == 0 ? ".w" : ".b") + std::to_string(l);
        if (!j.contains(name)) throw SchemaError(name, "missing parameter");
        Shape shape = j[name].at("shape").get<Shape>();
        if (shape != t.shape()) {
          throw SchemaError(name, "shape " + shape_string(shape) + " does not match " + shape_string(t.shape()));
        }
        t = Tensor(shape, j[name].at("values").get<std::vector<double>>());
      }
    }
  }
}

}  // namespace cil
