#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "cil/dataset.hpp"

namespace cil {

struct EnvAssignment {
  std::vector<std::uint32_t> env;  // per sample, in 0..m-1
  std::vector<double> edges;       // m + 1 strictly increasing bounds
  std::size_t m = 0;

  std::vector<std::size_t> counts() const;
  std::size_t empty_count() const;
  // Sample indices per environment (empty environments yield empty lists).
  std::vector<std::vector<std::size_t>> members() const;
};

EnvAssignment equal_split(const Dataset& data, std::size_t m);
EnvAssignment quantile_split(const Dataset& data, std::size_t m);

}  // namespace cil
