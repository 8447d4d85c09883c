#include "cil/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>

#include "json.hpp"

namespace cil {

void TrainConfig::validate() const {
  if (!(lr > 0)) throw SchemaError("train.lr", "must be positive");
  if (!(olr > 0)) throw SchemaError("train.olr", "must be positive");
  if (penalty_step > steps) throw SchemaError("train.penalty_step", "must not exceed steps");
  if (!(lambda >= 0)) throw SchemaError("train.lambda", "must be non-negative");
}

namespace {

nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace

std::string RunHistory::to_jsonl() const {
  std::string out;
  for (const auto& r : steps) {
    nlohmann::json j = {{"step", r.step},
                        {"erm", number_or_null(r.erm)},
                        {"penalty", number_or_null(r.penalty)},
                        {"h_loss", number_or_null(r.h_loss)},
                        {"g_loss", number_or_null(r.g_loss)},
                        {"grad_norm_descent", number_or_null(r.grad_norm_descent)},
                        {"grad_norm_ascent", number_or_null(r.grad_norm_ascent)},
                        {"skipped_envs", r.skipped_envs}};
    if (!r.q.empty()) j["q"] = r.q;
    out += j.dump();
    out += '\n';
  }
  return out;
}

TargetScaler TargetScaler::fit(const Tensor& t, bool enabled) {
  const std::size_t n = t.rows(), d = t.cols();
  TargetScaler s;
  s.mean.assign(d, 0.0);
  s.scale.assign(d, 1.0);
  if (!enabled || n == 0) return s;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d; ++k) s.mean[k] += t(i, k);
  for (auto& m : s.mean) m /= static_cast<double>(n);
  std::vector<double> var(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d; ++k) var[k] += (t(i, k) - s.mean[k]) * (t(i, k) - s.mean[k]);
  for (std::size_t k = 0; k < d; ++k) s.scale[k] = std::max(std::sqrt(var[k] / static_cast<double>(n)), 1e-12);
  return s;
}

Tensor TargetScaler::apply(const Tensor& t) const {
  const std::size_t d = t.cols();
  std::vector<double> out(t.data().begin(), t.data().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (out[i] - mean[i % d]) / scale[i % d];
  return Tensor(t.shape(), std::move(out));
}

namespace {

class BatchSampler {
 public:
  BatchSampler(const Dataset& data, std::size_t batch_size, std::uint64_t seed)
      : data_(data), batch_(batch_size), rng_(seed), order_(data.size()) {
    std::iota(order_.begin(), order_.end(), 0);
  }

  bool full() const { return batch_ == 0 || batch_ >= data_.size(); }

  // Returns the rows of the next batch; full-batch mode returns every row without reshuffling.
  const std::vector<std::size_t>& next_rows() {
    if (full()) return order_;
    if (pos_ == 0 || pos_ + batch_ > order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      pos_ = 0;
    }
    rows_.assign(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
                 order_.begin() + static_cast<std::ptrdiff_t>(pos_ + batch_));
    pos_ += batch_;
    return rows_;
  }

 private:
  const Dataset& data_;
  std::size_t batch_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_, rows_;
  std::size_t pos_ = 0;
};

// Holds either the whole dataset or a materialized minibatch.
struct BatchView {
  std::optional<Dataset> owned;
  const Dataset* ptr = nullptr;
  const Dataset& get() const { return *ptr; }
};

BatchView make_batch(const Dataset& data, BatchSampler& sampler, const std::vector<std::size_t>*& rows) {
  BatchView v;
  const auto& r = sampler.next_rows();
  rows = &r;
  if (sampler.full()) {
    v.ptr = &data;
  } else {
    v.owned = data.subset(r);
    v.ptr = &*v.owned;
  }
  return v;
}

std::vector<Tensor*> params_of(std::initializer_list<Mlp*> mlps) {
  std::vector<Tensor*> out;
  for (Mlp* m : mlps) {
    auto p = m->params();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::vector<Tensor> grads_of(std::initializer_list<const MlpVars*> vars) {
  std::vector<Tensor> out;
  for (const MlpVars* v : vars) {
    auto g = gradients(*v);
    out.insert(out.end(), std::make_move_iterator(g.begin()), std::make_move_iterator(g.end()));
  }
  return out;
}

bool finite(double v) { return std::isfinite(v); }

}  // namespace

TrainResult sgda_train(const Dataset& data, ModelBundle bundle, const TrainConfig& config) {
  config.validate();
  if (data.size() == 0) throw ValidationError("sgda_train on an empty dataset");
  const auto start = std::chrono::steady_clock::now();
  const TargetScaler scaler = TargetScaler::fit(data.t, config.standardize_t);
  const Tensor all_targets = scaler.apply(data.t);
  BatchSampler sampler(data, config.batch_size, config.seed);
  Optimizer descent(config.optimizer, config.lr), h_opt(config.optimizer, config.olr), g_opt(config.optimizer, config.olr);
  const auto descent_params = params_of({&bundle.phi, &bundle.w});
  const auto h_params = params_of({&bundle.h});
  const auto g_params = params_of({&bundle.g});
  RunHistory history;
  history.steps.reserve(config.steps);

  for (std::size_t step = 0; step < config.steps; ++step) {
    const ModelBundle before = bundle;
    const std::vector<std::size_t>* rows = nullptr;
    BatchView view = make_batch(data, sampler, rows);
    const Dataset& b = view.get();
    const Tensor targets = sampler.full() ? all_targets : scaler.apply(b.t);
    const double lambda = step >= config.penalty_step ? config.lambda : 0.0;
    StepRecord rec;
    rec.step = step;

    // Ascent player: g regresses t on (Φ(x), y); lowering its error raises the objective.
    {
      Tape tape;
      BundleVars v = bind_bundle(tape, bundle, {false, false, false, true});
      Var z = mlp_forward(bundle.phi, v.phi, tape.constant(b.x));
      Var t_g = mlp_forward(bundle.g, v.g, concat_cols(z, tape.constant(b.one_hot())));
      Var g_loss = loss_mse(t_g, tape.constant(targets));
      if (!finite(g_loss.value()[0])) throw DivergenceError(step, before);
      tape.backward(g_loss);
      auto grads = grads_of({&v.g});
      rec.grad_norm_ascent = l2_norm(grads);
      g_opt.step(g_params, grads);
    }

    // Descent player: (w, Φ) on the update-rule loss, h on its own regression loss.
    {
      Tape tape;
      BundleVars v = bind_bundle(tape, bundle, {true, true, false, false});
      BundleOutputs out = forward_bundle(tape, bundle, v, b);
      CilLosses cl = cil_losses(tape, out, b, targets, lambda, config.rule);
      MlpVars h_fit = bind(tape, bundle.h, true);
      Var h_reg = loss_mse(mlp_forward(bundle.h, h_fit, detach(out.z)), tape.constant(targets));
      Var root = add(cl.main, h_reg);
      if (!finite(root.value()[0]) || !finite(cl.gmax.value()[0])) throw DivergenceError(step, before);
      tape.backward(root);
      auto dgrads = grads_of({&v.phi, &v.w});
      rec.grad_norm_descent = l2_norm(dgrads);
      descent.step(descent_params, dgrads);
      h_opt.step(h_params, grads_of({&h_fit}));
      rec.erm = cl.erm.value()[0];
      rec.h_loss = cl.h_term.value()[0];
      rec.g_loss = cl.gmax.value()[0];
      rec.penalty = cl.penalty_gap;
    }
    history.steps.push_back(std::move(rec));
  }
  if (config.probes > 0) {
    const Suboptimality s = estimate_suboptimality(bundle, data, config, config.probes);
    history.eps1 = s.eps1;
    history.eps2 = s.eps2;
  }
  history.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {std::move(bundle), std::move(history)};
}

TrainResult sgd_train(const Dataset& data, ModelBundle bundle, const PenaltySpec& spec, const TrainConfig& config,
                      const EnvAssignment* envs) {
  config.validate();
  spec.validate();
  if (spec.method == Method::cil) throw ContractError("CIL trains through sgda_train");
  if (data.size() == 0) throw ValidationError("sgd_train on an empty dataset");
  const auto start = std::chrono::steady_clock::now();

  std::optional<EnvAssignment> own;
  if (env_based(spec.method) && envs == nullptr) {
    own = spec.split_kind == SplitKind::equal ? equal_split(data, *spec.split) : quantile_split(data, *spec.split);
    envs = &*own;
  }
  if (envs != nullptr && envs->env.size() != data.size()) throw DimensionError("environment assignment does not match dataset");
  const EnvBatches full_members = envs ? envs->members() : EnvBatches{};
  std::vector<double> q;
  if (spec.method == Method::groupdro) q.assign(envs->m, 1.0 / static_cast<double>(envs->m));

  BatchSampler sampler(data, config.batch_size, config.seed);
  Optimizer opt(config.optimizer, config.lr);
  const auto params = params_of({&bundle.phi, &bundle.w});
  RunHistory history;
  history.steps.reserve(config.steps);

  for (std::size_t step = 0; step < config.steps; ++step) {
    const ModelBundle before = bundle;
    const std::vector<std::size_t>* rows = nullptr;
    BatchView view = make_batch(data, sampler, rows);
    const Dataset& b = view.get();
    const double lambda = step >= spec.penalty_step ? spec.lambda : 0.0;
    StepRecord rec;
    rec.step = step;

    Tape tape;
    MlpVars pv = bind(tape, bundle.phi, true);
    MlpVars wv = bind(tape, bundle.w, true);
    Var logits = mlp_forward(bundle.w, wv, mlp_forward(bundle.phi, pv, tape.constant(b.x)));
    Var erm = classification_loss(logits, b);
    rec.erm = erm.value()[0];

    EnvBatches members;
    if (envs != nullptr) {
      if (sampler.full()) {
        members = full_members;
      } else {
        members.assign(envs->m, {});
        for (std::size_t i = 0; i < rows->size(); ++i) members[envs->env[(*rows)[i]]].push_back(i);
      }
    }
    Var root = erm;
    switch (spec.method) {
      case Method::erm:
        rec.penalty = 0.0;
        break;
      case Method::rex: {
        PenalizedLoss pl = rex_loss(logits, b, members, lambda);
        root = pl.total;
        rec.penalty = pl.penalty;
        rec.skipped_envs = pl.skipped;
        break;
      }
      case Method::irmv1: {
        PenalizedLoss pl = irmv1_loss(logits, b, members, lambda);
        root = pl.total;
        rec.penalty = pl.penalty;
        rec.skipped_envs = pl.skipped;
        break;
      }
      case Method::groupdro: {
        GroupDroLoss gl = groupdro_loss(logits, b, members, q, spec.eta_q);
        root = gl.total;
        q = std::move(gl.q);
        rec.q = q;
        rec.skipped_envs = gl.skipped;
        rec.penalty = gl.total.value()[0];
        break;
      }
      case Method::cil:
        break;
    }
    if (!finite(root.value()[0])) throw DivergenceError(step, before);
    tape.backward(root);
    auto grads = grads_of({&pv, &wv});
    rec.grad_norm_descent = l2_norm(grads);
    opt.step(params, grads);
    history.steps.push_back(std::move(rec));
  }
  history.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {std::move(bundle), std::move(history)};
}

Evaluation evaluate(const ModelBundle& bundle, const Dataset& data) {
  if (data.size() == 0) throw ValidationError("evaluate on an empty dataset");
  Tape tape;
  BundleVars v = bind_bundle(tape, bundle, {false, false, false, false});
  Var logits = mlp_forward(bundle.w, v.w, mlp_forward(bundle.phi, v.phi, tape.constant(data.x)));
  const auto pred = predict_classes(logits.value());
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) correct += pred[i] == data.y[i] ? 1 : 0;
  Evaluation e;
  e.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  e.mean_loss = classification_loss(logits, data).value()[0];
  return e;
}

namespace {

std::vector<Var> leaves(Tape& tape, const std::vector<Tensor>& values, bool trainable) {
  std::vector<Var> out;
  for (const auto& v : values) out.push_back(tape.leaf(v, trainable));
  return out;
}

double saddle_value(const SaddleProblem& p, const std::vector<Tensor>& x, const std::vector<Tensor>& y) {
  Tape tape;
  return p.objective(tape, leaves(tape, x, false), leaves(tape, y, false)).value()[0];
}

// Runs one restart for a single player; returns the best objective seen along the path.
double probe_player(const SaddleProblem& p, bool minimize, std::vector<Tensor> start, const ProbeConfig& cfg,
                    std::mt19937_64& rng, bool perturb) {
  if (perturb) {
    std::normal_distribution<double> noise(0.0, cfg.jitter);
    for (auto& t : start)
      for (auto& v : t.mutable_data()) v += noise(rng);
  }
  Optimizer opt(OptimizerKind::adam, cfg.lr);
  std::vector<Tensor*> ptrs;
  for (auto& t : start) ptrs.push_back(&t);
  double best = minimize ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k <= cfg.steps; ++k) {
    Tape tape;
    std::vector<Var> mine = leaves(tape, start, true);
    std::vector<Var> x = minimize ? mine : leaves(tape, p.min_params, false);
    std::vector<Var> y = minimize ? leaves(tape, p.max_params, false) : mine;
    Var q = p.objective(tape, x, y);
    const double value = q.value()[0];
    if (std::isfinite(value)) best = minimize ? std::min(best, value) : std::max(best, value);
    if (k == cfg.steps) break;
    tape.backward(q);
    std::vector<Tensor> grads;
    for (const Var& v : mine) grads.push_back(v.grad());
    if (minimize) opt.step(ptrs, grads);
    else opt.ascend(ptrs, grads);
  }
  return best;
}

MlpVars slice_vars(const std::vector<Var>& vars, std::size_t& offset, const Mlp& mlp) {
  MlpVars m;
  for (std::size_t l = 0; l < mlp.weights.size(); ++l) {
    m.weights.push_back(vars[offset++]);
    m.biases.push_back(vars[offset++]);
  }
  return m;
}

std::vector<Tensor> copy_params(std::initializer_list<const Mlp*> mlps) {
  std::vector<Tensor> out;
  for (const Mlp* m : mlps)
    for (const Tensor* t : m->params()) out.push_back(*t);
  return out;
}

}  // namespace

Suboptimality estimate_saddle_gaps(const SaddleProblem& problem, std::size_t probes, const ProbeConfig& probe) {
  if (probes == 0) throw ValidationError("suboptimality estimation needs at least one probe");
  std::mt19937_64 rng(probe.seed);
  const double base = saddle_value(problem, problem.min_params, problem.max_params);
  double best_min = base, best_max = base;
  for (std::size_t r = 0; r < probes; ++r) {
    best_min = std::min(best_min, probe_player(problem, true, problem.min_params, probe, rng, r > 0));
    best_max = std::max(best_max, probe_player(problem, false, problem.max_params, probe, rng, r > 0));
  }
  return {std::max(0.0, base - best_min), std::max(0.0, best_max - base)};
}

Suboptimality estimate_suboptimality(const ModelBundle& bundle, const Dataset& data, const TrainConfig& config,
                                     std::size_t probes) {
  if (probes == 0) throw ValidationError("suboptimality estimation needs at least one probe");
  const TargetScaler scaler = TargetScaler::fit(data.t, config.standardize_t);
  const Tensor targets = scaler.apply(data.t);
  SaddleProblem p;
  p.min_params = copy_params({&bundle.phi, &bundle.w, &bundle.h});
  p.max_params = copy_params({&bundle.g});
  const double lambda = config.lambda;
  p.objective = [&bundle, &data, &targets, lambda](Tape& tape, const std::vector<Var>& x, const std::vector<Var>& y) {
    std::size_t off = 0;
    BundleVars v;
    v.phi = slice_vars(x, off, bundle.phi);
    v.w = slice_vars(x, off, bundle.w);
    v.h = slice_vars(x, off, bundle.h);
    off = 0;
    v.g = slice_vars(y, off, bundle.g);
    BundleOutputs out = forward_bundle(tape, bundle, v, data);
    return cil_losses(tape, out, data, targets, lambda, UpdateRule::full_objective).main;
  };
  ProbeConfig pc;
  pc.steps = config.probe_steps;
  pc.lr = config.lr;
  pc.seed = config.seed ^ 0x9e3779b97f4a7c15ULL;
  return estimate_saddle_gaps(p, probes, pc);
}

}  // namespace cil
