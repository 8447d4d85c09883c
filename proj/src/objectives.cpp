#include "cil/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cil/errors.hpp"

namespace cil {

std::string method_name(Method m) {
  switch (m) {
    case Method::erm: return "ERM";
    case Method::irmv1: return "IRMv1";
    case Method::rex: return "REx";
    case Method::groupdro: return "GroupDRO";
    case Method::cil: return "CIL";
  }
  return "?";
}

Method method_from_name(const std::string& name) {
  for (Method m : {Method::erm, Method::irmv1, Method::rex, Method::groupdro, Method::cil}) {
    if (method_name(m) == name) return m;
  }
  throw SchemaError("method.name", "unknown method '" + name + "'");
}

bool env_based(Method m) { return m == Method::irmv1 || m == Method::rex || m == Method::groupdro; }

void PenaltySpec::validate() const {
  if (!(lambda >= 0)) throw SchemaError("method.lambda", "must be non-negative");
  if (env_based(method) && (!split || *split < 1)) {
    throw SchemaError("method.split", method_name(method) + " needs an environment count of at least 1");
  }
  if (method == Method::groupdro && !(eta_q > 0)) throw SchemaError("method.eta_q", "must be positive");
}

std::string rule_name(UpdateRule r) {
  switch (r) {
    case UpdateRule::algorithm1: return "algorithm1";
    case UpdateRule::full_objective: return "full_objective";
    case UpdateRule::conditional_adversary: return "conditional_adversary";
  }
  return "unknown";
}

UpdateRule rule_from_name(const std::string& name) {
  if (name == "algorithm1") return UpdateRule::algorithm1;
  if (name == "full_objective") return UpdateRule::full_objective;
  if (name == "conditional_adversary") return UpdateRule::conditional_adversary;
  throw SchemaError("train.update_rule", "unknown update rule '" + name + "'");
}

Var classification_loss(Var logits, std::span<const std::uint32_t> labels, std::size_t classes) {
  if (labels.empty()) throw ValidationError("classification loss on an empty batch");
  if (logits.value().cols() == 1) {
    std::vector<double> y(labels.begin(), labels.end());
    return loss_bce(logits, Tensor::column(std::move(y)));
  }
  if (logits.value().cols() != classes) throw DimensionError("logit width does not match class count");
  return loss_softmax_ce(logits, labels);
}

Var classification_loss(Var logits, const Dataset& batch) {
  return classification_loss(logits, batch.y, batch.meta.classes);
}

Var erm_loss(Tape& tape, const ModelBundle& bundle, const BundleVars& vars, const Dataset& batch) {
  if (batch.size() == 0) throw ValidationError("erm_loss on an empty batch");
  return classification_loss(forward_bundle(tape, bundle, vars, batch).logits, batch);
}

namespace {

std::vector<std::uint32_t> gather(const std::vector<std::uint32_t>& y, const std::vector<std::size_t>& rows) {
  std::vector<std::uint32_t> out;
  out.reserve(rows.size());
  for (auto r : rows) out.push_back(y[r]);
  return out;
}

}  // namespace

EnvRisks env_risks(Var logits, const Dataset& batch, const EnvBatches& envs) {
  EnvRisks out;
  for (std::size_t e = 0; e < envs.size(); ++e) {
    if (envs[e].empty()) {
      ++out.skipped;
      continue;
    }
    Var sub_logits = select_rows(logits, envs[e]);
    out.risks.push_back(classification_loss(sub_logits, gather(batch.y, envs[e]), batch.meta.classes));
    out.env_ids.push_back(e);
  }
  if (out.risks.empty()) throw ValidationError("every environment is empty");
  return out;
}

PenalizedLoss rex_loss(Var logits, const Dataset& batch, const EnvBatches& envs, double lambda) {
  EnvRisks er = env_risks(logits, batch, envs);
  const std::size_t k = er.risks.size();
  Var r = stack(er.risks);
  Var centered = sub(r, broadcast(mean(r), k, 1));
  Var variance = mean(square(centered));
  PenalizedLoss out;
  out.total = lambda == 0.0 ? sum(r) : add(sum(r), scale(variance, lambda));
  out.penalty = variance.value()[0];
  out.skipped = er.skipped;
  return out;
}

Var irm_scale_gradient(Var logits, const Dataset& batch) {
  const Tensor& z = logits.value();
  const std::size_t n = z.rows(), k = z.cols();
  if (batch.size() != n) throw DimensionError("irm_scale_gradient: label count does not match logits");
  if (n == 0) throw ValidationError("irm_scale_gradient on an empty batch");
  // p holds σ(z) for a single logit, softmax(z) otherwise; c is the row's Σ p·z.
  std::vector<double> p(n * k), c(n, 0.0), target(n * k, 0.0);
  double value = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (k == 1) {
      const double zi = z(i, 0);
      p[i] = zi >= 0 ? 1.0 / (1.0 + std::exp(-zi)) : std::exp(zi) / (1.0 + std::exp(zi));
      target[i] = batch.y[i];
      value += (p[i] - target[i]) * zi;
      continue;
    }
    double mx = z(i, 0);
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, z(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(z(i, j) - mx);
    target[i * k + batch.y[i]] = 1.0;
    for (std::size_t j = 0; j < k; ++j) {
      p[i * k + j] = std::exp(z(i, j) - mx) / s;
      c[i] += p[i * k + j] * z(i, j);
      value += (p[i * k + j] - target[i * k + j]) * z(i, j);
    }
  }
  const std::size_t iz = logits.id();
  return logits.tape().record(
      "irm_scale_gradient", {iz}, Tensor({1, 1}, {value / static_cast<double>(n)}, Tensor::NonFinite::allow),
      [iz, p, c, target, n, k](Tape& t, std::size_t self) {
        if (!t.requires_grad(iz)) return;
        const double g = t.grad(self)[0] / static_cast<double>(n);
        auto zv = t.value(iz).data();
        auto& gz = t.grad_buffer(iz);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < k; ++j) {
            const std::size_t q = i * k + j;
            const double curvature = k == 1 ? p[q] * (1.0 - p[q]) * zv[q] : p[q] * (zv[q] - c[i]);
            gz[q] += g * (p[q] - target[q] + curvature);
          }
        }
      });
}

PenalizedLoss irmv1_loss(Var logits, const Dataset& batch, const EnvBatches& envs, double lambda) {
  std::vector<Var> risks, grads;
  std::size_t skipped = 0;
  for (const auto& rows : envs) {
    if (rows.empty()) {
      ++skipped;
      continue;
    }
    Var sub_logits = select_rows(logits, rows);
    Dataset labels;
    labels.y = gather(batch.y, rows);
    labels.meta.classes = batch.meta.classes;
    risks.push_back(classification_loss(sub_logits, labels.y, batch.meta.classes));
    grads.push_back(square(irm_scale_gradient(sub_logits, labels)));
  }
  if (risks.empty()) throw ValidationError("every environment is empty");
  Var penalty = sum(stack(grads));
  PenalizedLoss out;
  out.total = lambda == 0.0 ? sum(stack(risks)) : add(sum(stack(risks)), scale(penalty, lambda));
  out.penalty = penalty.value()[0];
  out.skipped = skipped;
  return out;
}

GroupDroLoss groupdro_loss(Var logits, const Dataset& batch, const EnvBatches& envs, std::vector<double> q,
                           double eta_q) {
  if (q.size() != envs.size()) throw DimensionError("GroupDRO weights do not match environment count");
  double mass = 0.0;
  for (double v : q) {
    if (!(v >= 0)) throw ValidationError("GroupDRO weights must be non-negative");
    mass += v;
  }
  if (std::abs(mass - 1.0) > 1e-9) throw ValidationError("GroupDRO weights must sum to 1");
  EnvRisks er = env_risks(logits, batch, envs);
  if (eta_q != 0.0) {
    std::vector<double> logq(q.size());
    for (std::size_t e = 0; e < q.size(); ++e) {
      logq[e] = q[e] > 0 ? std::log(q[e]) : -std::numeric_limits<double>::infinity();
    }
    for (std::size_t i = 0; i < er.risks.size(); ++i) logq[er.env_ids[i]] += eta_q * er.risks[i].value()[0];
    const double top = *std::max_element(logq.begin(), logq.end());
    double z = 0.0;
    for (std::size_t e = 0; e < q.size(); ++e) {
      q[e] = std::exp(logq[e] - top);
      z += q[e];
    }
    for (auto& v : q) v /= z;
  }
  Var total = scale(er.risks[0], q[er.env_ids[0]]);
  for (std::size_t i = 1; i < er.risks.size(); ++i) total = add(total, scale(er.risks[i], q[er.env_ids[i]]));
  return {total, std::move(q), er.skipped};
}

CilLosses cil_losses(Tape& tape, const BundleOutputs& out, const Dataset& batch, const Tensor& targets, double lambda,
                     UpdateRule rule) {
  if (batch.size() == 0) throw ValidationError("cil_losses on an empty batch");
  CilLosses r;
  Var t = tape.constant(targets);
  r.erm = classification_loss(out.logits, batch);
  r.h_term = loss_mse(out.t_h, t);
  r.gmax = loss_mse(out.t_g, t);
  r.penalty_gap = r.h_term.value()[0] - r.gmax.value()[0];
  if (lambda == 0.0) {
    r.main = r.erm;
  } else {
    Var h_part = rule == UpdateRule::conditional_adversary ? detach(r.h_term) : r.h_term;
    Var g_part = rule == UpdateRule::algorithm1 ? detach(r.gmax) : r.gmax;
    r.main = add(r.erm, scale(sub(h_part, g_part), lambda));
  }
  return r;
}

void TabularDist::validate() const {
  if (t_values.empty() || z_count == 0 || y_count == 0) throw ValidationError("tabular distribution has an empty alphabet");
  if (prob.size() != z_count * y_count * t_values.size()) throw DimensionError("tabular probability table has the wrong size");
  double total = 0.0;
  for (double v : prob) {
    if (!(v >= 0)) throw ValidationError("tabular probabilities must be non-negative");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-12) throw ValidationError("tabular probabilities must sum to 1");
}

ConditionalMeans conditional_mean_oracle(const TabularDist& dist) {
  dist.validate();
  const std::size_t T = dist.t_values.size();
  ConditionalMeans out;
  out.h.resize(dist.z_count);
  out.g.resize(dist.z_count * dist.y_count);
  // Means are accumulated as offsets from the first domain value, so a constant t comes back exactly.
  const double base = dist.t_values.front();
  for (std::size_t z = 0; z < dist.z_count; ++z) {
    double mz = 0.0, sz = 0.0;
    for (std::size_t y = 0; y < dist.y_count; ++y) {
      double m = 0.0, s = 0.0;
      for (std::size_t k = 0; k < T; ++k) {
        m += dist.p(z, y, k);
        s += dist.p(z, y, k) * (dist.t_values[k] - base);
      }
      if (m > 0) out.g[z * dist.y_count + y] = base + s / m;
      mz += m;
      sz += s;
    }
    if (mz > 0) out.h[z] = base + sz / mz;
  }
  return out;
}

double cil_penalty_oracle(const TabularDist& dist) {
  const ConditionalMeans cm = conditional_mean_oracle(dist);
  const std::size_t T = dist.t_values.size();
  // E[V(t|z)] − E[V(t|z,y)] equals the mass-weighted squared gap between the two conditional means.
  double total = 0.0;
  for (std::size_t z = 0; z < dist.z_count; ++z) {
    for (std::size_t y = 0; y < dist.y_count; ++y) {
      const auto& g = cm.g[z * dist.y_count + y];
      if (!g) continue;
      double m = 0.0;
      for (std::size_t k = 0; k < T; ++k) m += dist.p(z, y, k);
      total += m * (*g - *cm.h[z]) * (*g - *cm.h[z]);
    }
  }
  return total;
}

}  // namespace cil
