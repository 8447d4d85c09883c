#include "cil/splitter.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cil/errors.hpp"

namespace cil {

std::vector<std::size_t> EnvAssignment::counts() const {
  std::vector<std::size_t> c(m, 0);
  for (auto e : env) ++c[e];
  return c;
}

std::size_t EnvAssignment::empty_count() const {
  const auto c = counts();
  return static_cast<std::size_t>(std::count(c.begin(), c.end(), std::size_t{0}));
}

std::vector<std::vector<std::size_t>> EnvAssignment::members() const {
  std::vector<std::vector<std::size_t>> out(m);
  for (std::size_t i = 0; i < env.size(); ++i) out[env[i]].push_back(i);
  return out;
}

namespace {

void check_split(const Dataset& data, std::size_t m) {
  if (m < 1) throw ValidationError("environment count must be at least 1");
  if (data.domain_dim() != 1) throw ValidationError("splitting needs a scalar domain index");
  if (data.size() == 0) throw ValidationError("cannot split an empty dataset");
}

std::pair<double, double> t_range(const Dataset& data) {
  auto t = data.t.data();
  const auto [lo, hi] = std::minmax_element(t.begin(), t.end());
  return {*lo, *hi};
}

}  // namespace

EnvAssignment equal_split(const Dataset& data, std::size_t m) {
  check_split(data, m);
  auto [lo, hi] = t_range(data);
  if (hi <= lo) hi = lo + 1.0;
  EnvAssignment a;
  a.m = m;
  a.edges.resize(m + 1);
  for (std::size_t k = 0; k <= m; ++k) {
    a.edges[k] = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(m);
  }
  a.edges[m] = hi;
  a.env.resize(data.size());
  auto t = data.t.data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    // upper_bound finds the first edge strictly above t, so bins are [e_k, e_k+1).
    const auto it = std::upper_bound(a.edges.begin(), a.edges.end(), t[i]);
    std::size_t k = static_cast<std::size_t>(it - a.edges.begin());
    k = k == 0 ? 0 : k - 1;
    a.env[i] = static_cast<std::uint32_t>(std::min(k, m - 1));
  }
  return a;
}

EnvAssignment quantile_split(const Dataset& data, std::size_t m) {
  check_split(data, m);
  const std::size_t n = data.size(), d = data.dim();
  auto t = data.t.data();
  auto x = data.x.data();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  // Ties in t are broken by sample content, so the result does not depend on row order.
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (t[a] != t[b]) return t[a] < t[b];
    if (data.y[a] != data.y[b]) return data.y[a] < data.y[b];
    return std::lexicographical_compare(x.begin() + a * d, x.begin() + (a + 1) * d, x.begin() + b * d,
                                        x.begin() + (b + 1) * d);
  });
  EnvAssignment a;
  a.m = m;
  a.env.resize(n);
  for (std::size_t r = 0; r < n; ++r) a.env[order[r]] = static_cast<std::uint32_t>(r * m / n);
  auto [lo, hi] = t_range(data);
  a.edges.resize(m + 1);
  a.edges[0] = lo;
  for (std::size_t k = 1; k < m; ++k) {
    const std::size_t first = (k * n + m - 1) / m;
    a.edges[k] = first < n ? t[order[first]] : hi;
  }
  a.edges[m] = hi;
  for (std::size_t k = 1; k <= m; ++k) {
    if (a.edges[k] <= a.edges[k - 1]) a.edges[k] = std::nextafter(a.edges[k - 1], INFINITY);
  }
  return a;
}

}  // namespace cil
