#include "cil/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "cil/errors.hpp"

namespace cil {
namespace {

double evaluate(const ScalarFn& fn, const Tensor& point) {
  Tape tape;
  Var x = tape.leaf(point);
  Var y = fn(tape, x);
  if (y.value().size() != 1) throw ContractError("check_gradients needs a scalar function");
  return y.value()[0];
}

}  // namespace

Tensor gradient_at(const ScalarFn& fn, const Tensor& point) {
  Tape tape;
  Var x = tape.leaf(point);
  Var y = fn(tape, x);
  tape.backward(y);
  return x.grad();
}

double check_gradients(const ScalarFn& fn, const Tensor& point, double step) {
  if (!(step > 0)) throw ValidationError("finite-difference step must be positive");
  const Tensor analytic = gradient_at(fn, point);
  double worst = 0.0;
  std::vector<double> probe(point.data().begin(), point.data().end());
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double orig = probe[i];
    const double hi = orig + step;
    const double lo = orig - step;
    probe[i] = hi;
    const double up = evaluate(fn, Tensor(point.shape(), probe));
    probe[i] = lo;
    const double down = evaluate(fn, Tensor(point.shape(), probe));
    probe[i] = orig;
    const double fd = (up - down) / (hi - lo);
    const double a = analytic[i];
    worst = std::max(worst, std::abs(a - fd) / std::max(1.0, std::abs(a)));
  }
  return worst;
}

}  // namespace cil
