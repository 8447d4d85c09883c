#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cil/tensor.hpp"
#include "json.hpp"

namespace cil {

struct DatasetMeta {
  std::string name;
  std::size_t n = 0;
  std::size_t d = 0;
  std::size_t d_t = 0;
  std::size_t classes = 2;
  std::uint64_t seed = 0;
  nlohmann::json schedule;  // generator descriptor, null when not generated
};

struct Dataset {
  Tensor x;                      // n×d
  std::vector<std::uint32_t> y;  // n labels in [0, classes)
  Tensor t;                      // n×d_t
  DatasetMeta meta;

  std::size_t size() const { return y.size(); }
  std::size_t dim() const { return x.cols(); }
  std::size_t domain_dim() const { return t.cols(); }

  // Refreshes meta counts from the arrays and checks the row/label invariants.
  void finalize();
  void validate() const;

  Dataset subset(std::span<const std::size_t> rows) const;
  // Labels as an n×1 column of doubles.
  Tensor label_column() const;
  Tensor one_hot() const;
};

nlohmann::json meta_to_json(const DatasetMeta& meta);
DatasetMeta meta_from_json(const nlohmann::json& j);

}  // namespace cil
