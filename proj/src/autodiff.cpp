#include "cil/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

#include "cil/errors.hpp"

namespace cil {
namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

using NF = Tensor::NonFinite;

Tensor make(Shape shape, std::vector<double> data) {
  return Tensor(std::move(shape), std::move(data), NF::allow);
}

void require_same_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw ContractError("operands recorded on different tapes");
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

void accumulate(Tape& tape, std::size_t id, const std::vector<double>& delta) {
  if (!tape.requires_grad(id)) return;
  auto& g = tape.grad_buffer(id);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

double stable_sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

const Tensor& Var::value() const { return tape_->value(id_); }
const Tensor& Var::grad() const { return tape_->grad(id_); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.op = requires_grad ? "leaf" : "const";
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(std::string op, std::vector<std::size_t> parents, Tensor value, Backprop backprop) {
  Node n;
  n.op = std::move(op);
  for (auto p : parents) {
    if (p >= nodes_.size()) throw ContractError("parent index does not precede child");
    n.requires_grad = n.requires_grad || nodes_[p].requires_grad;
  }
  n.parents = std::move(parents);
  n.value = std::move(value);
  if (n.requires_grad) n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(Var root) {
  if (&root.tape() != this) throw ContractError("backward root belongs to another tape");
  const std::size_t r = root.id();
  if (nodes_[r].value.size() != 1) {
    throw ContractError("backward needs a scalar root, got shape " +
                        shape_string(nodes_[r].value.shape()));
  }
  if (backward_done_) throw ContractError("backward already ran on this tape");
  backward_done_ = true;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    auto& n = nodes_[i];
    if (n.requires_grad || i == r) n.grad = make(n.value.shape(), std::vector<double>(n.value.size(), 0.0));
  }
  nodes_[r].grad.mutable_data()[0] = 1.0;
  for (std::size_t i = r + 1; i-- > 0;) {
    if (nodes_[i].requires_grad && nodes_[i].backprop) nodes_[i].backprop(*this, i);
  }
}

Var elementwise(UnaryOp op, Var a) {
  switch (op) {
    case UnaryOp::relu: return relu(a);
    case UnaryOp::sigmoid: return sigmoid(a);
    case UnaryOp::square: return square(a);
  }
  throw ContractError("unknown unary op");
}

Var elementwise(BinaryOp op, Var a, Var b) {
  switch (op) {
    case BinaryOp::add: return add(a, b);
    case BinaryOp::sub: return sub(a, b);
    case BinaryOp::mul: return mul(a, b);
  }
  throw ContractError("unknown binary op");
}

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows()) {
    throw DimensionError("matmul: shape mismatch " + shape_string(av.shape()) + " vs " +
                         shape_string(bv.shape()));
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("matmul", {ia, ib}, matmul_plain(av, bv), [ia, ib](Tape& t, std::size_t self) {
    const Tensor& A = t.value(ia);
    const Tensor& B = t.value(ib);
    const auto m = static_cast<Eigen::Index>(A.rows()), k = static_cast<Eigen::Index>(A.cols()),
               n = static_cast<Eigen::Index>(B.cols());
    ConstMap G(t.grad(self).data().data(), m, n);
    if (t.requires_grad(ia)) {
      MutMap ga(t.grad_buffer(ia).data(), m, k);
      ga.noalias() += G * ConstMap(B.data().data(), k, n).transpose();
    }
    if (t.requires_grad(ib)) {
      MutMap gb(t.grad_buffer(ib).data(), k, n);
      gb.noalias() += ConstMap(A.data().data(), m, k).transpose() * G;
    }
  });
}

namespace {

Var binary(const char* name, Var a, Var b, double sa, double sb, bool product) {
  require_same_tape(a, b);
  require_same_shape(name, a.value(), b.value());
  auto ad = a.value().data();
  auto bd = b.value().data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = product ? ad[i] * bd[i] : sa * ad[i] + sb * bd[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(name, {ia, ib}, make(a.value().shape(), std::move(out)),
                         [ia, ib, sa, sb, product](Tape& t, std::size_t self) {
                           auto G = t.grad(self).data();
                           std::vector<double> da(G.size()), db(G.size());
                           auto av = t.value(ia).data();
                           auto bv = t.value(ib).data();
                           for (std::size_t i = 0; i < G.size(); ++i) {
                             da[i] = product ? G[i] * bv[i] : sa * G[i];
                             db[i] = product ? G[i] * av[i] : sb * G[i];
                           }
                           accumulate(t, ia, da);
                           accumulate(t, ib, db);
                         });
}

template <class F, class D>
Var unary(const char* name, Var a, F f, D dfdx) {
  auto ad = a.value().data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(ad[i]);
  const std::size_t ia = a.id();
  return a.tape().record(name, {ia}, make(a.value().shape(), std::move(out)),
                         [ia, dfdx](Tape& t, std::size_t self) {
                           auto G = t.grad(self).data();
                           auto x = t.value(ia).data();
                           auto y = t.value(self).data();
                           std::vector<double> d(G.size());
                           for (std::size_t i = 0; i < G.size(); ++i) d[i] = G[i] * dfdx(x[i], y[i]);
                           accumulate(t, ia, d);
                         });
}

}  // namespace

Var add(Var a, Var b) { return binary("add", a, b, 1.0, 1.0, false); }
Var sub(Var a, Var b) { return binary("sub", a, b, 1.0, -1.0, false); }
Var mul(Var a, Var b) { return binary("mul", a, b, 0.0, 0.0, true); }

Var relu(Var a) {
  return unary(
      "relu", a, [](double x) { return x > 0 ? x : 0.0; },
      [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Var sigmoid(Var a) {
  return unary(
      "sigmoid", a, [](double x) { return stable_sigmoid(x); },
      [](double, double y) { return y * (1.0 - y); });
}

Var square(Var a) {
  return unary(
      "square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var scale(Var a, double factor) {
  return unary(
      "scale", a, [factor](double x) { return factor * x; },
      [factor](double, double) { return factor; });
}

Var add_row(Var a, Var row) {
  require_same_tape(a, row);
  const Tensor& av = a.value();
  const Tensor& rv = row.value();
  if (av.rank() != 2 || rv.rank() != 2 || rv.rows() != 1 || rv.cols() != av.cols()) {
    throw DimensionError("add_row: shape mismatch " + shape_string(av.shape()) + " vs " +
                         shape_string(rv.shape()));
  }
  const std::size_t n = av.rows(), k = av.cols();
  std::vector<double> out(av.data().begin(), av.data().end());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] += rv[j];
  const std::size_t ia = a.id(), ir = row.id();
  return a.tape().record("add_row", {ia, ir}, make(av.shape(), std::move(out)),
                         [ia, ir, n, k](Tape& t, std::size_t self) {
                           auto G = t.grad(self).data();
                           if (t.requires_grad(ia)) {
                             auto& ga = t.grad_buffer(ia);
                             for (std::size_t i = 0; i < G.size(); ++i) ga[i] += G[i];
                           }
                           if (t.requires_grad(ir)) {
                             auto& gr = t.grad_buffer(ir);
                             for (std::size_t i = 0; i < n; ++i)
                               for (std::size_t j = 0; j < k; ++j) gr[j] += G[i * k + j];
                           }
                         });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const std::size_t ia = a.id();
  return a.tape().record("sum", {ia}, make({1, 1}, {s}), [ia](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    if (!t.requires_grad(ia)) return;
    for (auto& v : t.grad_buffer(ia)) v += g;
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ValidationError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var select_rows(Var a, std::span<const std::size_t> rows) {
  const Tensor& av = a.value();
  const std::size_t k = av.cols(), n = av.rows();
  std::vector<double> out;
  out.reserve(rows.size() * k);
  for (auto r : rows) {
    if (r >= n) throw DimensionError("select_rows: row " + std::to_string(r) + " outside " + shape_string(av.shape()));
    for (std::size_t j = 0; j < k; ++j) out.push_back(av(r, j));
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  const std::size_t ia = a.id();
  return a.tape().record("select_rows", {ia}, make({idx.size(), k}, std::move(out)),
                         [ia, idx, k](Tape& t, std::size_t self) {
                           if (!t.requires_grad(ia)) return;
                           auto G = t.grad(self).data();
                           auto& ga = t.grad_buffer(ia);
                           for (std::size_t i = 0; i < idx.size(); ++i)
                             for (std::size_t j = 0; j < k; ++j) ga[idx[i] * k + j] += G[i * k + j];
                         });
}

Var concat_cols(Var a, Var b) {
  require_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rows() != bv.rows()) {
    throw DimensionError("concat_cols: row mismatch " + shape_string(av.shape()) + " vs " +
                         shape_string(bv.shape()));
  }
  const std::size_t n = av.rows(), ka = av.cols(), kb = bv.cols();
  std::vector<double> out(n * (ka + kb));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < ka; ++j) out[i * (ka + kb) + j] = av(i, j);
    for (std::size_t j = 0; j < kb; ++j) out[i * (ka + kb) + ka + j] = bv(i, j);
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("concat_cols", {ia, ib}, make({n, ka + kb}, std::move(out)),
                         [ia, ib, n, ka, kb](Tape& t, std::size_t self) {
                           auto G = t.grad(self).data();
                           if (t.requires_grad(ia)) {
                             auto& ga = t.grad_buffer(ia);
                             for (std::size_t i = 0; i < n; ++i)
                               for (std::size_t j = 0; j < ka; ++j) ga[i * ka + j] += G[i * (ka + kb) + j];
                           }
                           if (t.requires_grad(ib)) {
                             auto& gb = t.grad_buffer(ib);
                             for (std::size_t i = 0; i < n; ++i)
                               for (std::size_t j = 0; j < kb; ++j) gb[i * kb + j] += G[i * (ka + kb) + ka + j];
                           }
                         });
}

Var broadcast(Var scalar, std::size_t rows, std::size_t cols) {
  if (scalar.value().size() != 1) {
    throw DimensionError("broadcast needs a scalar, got " + shape_string(scalar.value().shape()));
  }
  const std::size_t is = scalar.id();
  return scalar.tape().record("broadcast", {is}, make({rows, cols}, std::vector<double>(rows * cols, scalar.value()[0])),
                              [is](Tape& t, std::size_t self) {
                                if (!t.requires_grad(is)) return;
                                double s = 0.0;
                                for (double g : t.grad(self).data()) s += g;
                                t.grad_buffer(is)[0] += s;
                              });
}

Var stack(std::span<const Var> scalars) {
  if (scalars.empty()) throw ValidationError("stack of zero scalars");
  Tape& tape = scalars.front().tape();
  std::vector<std::size_t> parents;
  std::vector<double> out;
  for (const Var& v : scalars) {
    if (&v.tape() != &tape) throw ContractError("operands recorded on different tapes");
    if (v.value().size() != 1) throw DimensionError("stack needs scalars, got " + shape_string(v.value().shape()));
    parents.push_back(v.id());
    out.push_back(v.value()[0]);
  }
  const std::size_t k = out.size();
  return tape.record("stack", parents, make({k, 1}, std::move(out)), [parents](Tape& t, std::size_t self) {
    auto G = t.grad(self).data();
    for (std::size_t i = 0; i < parents.size(); ++i) {
      if (t.requires_grad(parents[i])) t.grad_buffer(parents[i])[0] += G[i];
    }
  });
}

Var detach(Var a) { return a.tape().constant(a.value()); }

Var loss_bce(Var logits, const Tensor& labels) {
  const Tensor& z = logits.value();
  if (z.rank() != 2 || z.cols() != 1) throw DimensionError("loss_bce expects n×1 logits, got " + shape_string(z.shape()));
  if (!labels.same_shape(z)) {
    throw DimensionError("loss_bce: logits " + shape_string(z.shape()) + " vs labels " + shape_string(labels.shape()));
  }
  const std::size_t n = z.rows();
  if (n == 0) throw ValidationError("loss_bce on an empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double y = labels[i];
    if (y != 0.0 && y != 1.0) throw ValidationError("loss_bce label " + std::to_string(y) + " is not binary");
    const double zi = z[i];
    total += std::max(zi, 0.0) - zi * y + std::log1p(std::exp(-std::abs(zi)));
  }
  const std::size_t iz = logits.id();
  std::vector<double> y(labels.data().begin(), labels.data().end());
  return logits.tape().record("loss_bce", {iz}, make({1, 1}, {total / static_cast<double>(n)}),
                              [iz, y, n](Tape& t, std::size_t self) {
                                const double g = t.grad(self)[0] / static_cast<double>(n);
                                auto zv = t.value(iz).data();
                                std::vector<double> d(n);
                                for (std::size_t i = 0; i < n; ++i) d[i] = g * (stable_sigmoid(zv[i]) - y[i]);
                                accumulate(t, iz, d);
                              });
}

Var loss_softmax_ce(Var logits, std::span<const std::uint32_t> labels) {
  const Tensor& z = logits.value();
  const std::size_t n = z.rows(), k = z.cols();
  if (labels.size() != n) throw DimensionError("loss_softmax_ce: " + std::to_string(labels.size()) + " labels for " + shape_string(z.shape()));
  if (n == 0) throw ValidationError("loss_softmax_ce on an empty batch");
  std::vector<double> probs(n * k);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= k) throw ValidationError("label " + std::to_string(labels[i]) + " outside class range");
    double mx = z(i, 0);
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, z(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(z(i, j) - mx);
    const double lse = mx + std::log(s);
    total += lse - z(i, labels[i]);
    for (std::size_t j = 0; j < k; ++j) probs[i * k + j] = std::exp(z(i, j) - lse);
  }
  std::vector<std::uint32_t> y(labels.begin(), labels.end());
  const std::size_t iz = logits.id();
  return logits.tape().record("loss_softmax_ce", {iz}, make({1, 1}, {total / static_cast<double>(n)}),
                              [iz, probs, y, n, k](Tape& t, std::size_t self) {
                                const double g = t.grad(self)[0] / static_cast<double>(n);
                                std::vector<double> d(n * k);
                                for (std::size_t i = 0; i < n; ++i)
                                  for (std::size_t j = 0; j < k; ++j)
                                    d[i * k + j] = g * (probs[i * k + j] - (j == y[i] ? 1.0 : 0.0));
                                accumulate(t, iz, d);
                              });
}

Var loss_mse(Var pred, Var target) {
  require_same_tape(pred, target);
  require_same_shape("loss_mse", pred.value(), target.value());
  const std::size_t n = pred.value().rows();
  if (n == 0) throw ValidationError("loss_mse on an empty batch");
  return scale(sum(square(sub(pred, target))), 1.0 / static_cast<double>(n));
}

}  // namespace cil
