#include "cil/dataset.hpp"

#include "cil/errors.hpp"

namespace cil {

void Dataset::finalize() {
  meta.n = y.size();
  meta.d = x.rank() == 2 ? x.cols() : 0;
  meta.d_t = t.rank() == 2 ? t.cols() : 0;
  validate();
}

void Dataset::validate() const {
  if (x.rank() != 2 || t.rank() != 2) throw DimensionError("dataset x and t must be matrices");
  if (x.rows() != y.size() || t.rows() != y.size()) {
    throw DimensionError("dataset row counts differ: x " + shape_string(x.shape()) + ", y " +
                         std::to_string(y.size()) + ", t " + shape_string(t.shape()));
  }
  if (!t.all_finite()) throw ValidationError("dataset holds a non-finite domain index");
  for (auto label : y) {
    if (label >= meta.classes) {
      throw ValidationError("label " + std::to_string(label) + " outside [0, " + std::to_string(meta.classes) + ")");
    }
  }
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  const std::size_t d = dim(), dt = domain_dim();
  std::vector<double> xs, ts;
  std::vector<std::uint32_t> ys;
  xs.reserve(rows.size() * d);
  ts.reserve(rows.size() * dt);
  ys.reserve(rows.size());
  auto xd = x.data();
  auto td = t.data();
  for (auto r : rows) {
    if (r >= size()) throw DimensionError("subset row " + std::to_string(r) + " outside dataset of " + std::to_string(size()));
    xs.insert(xs.end(), xd.begin() + r * d, xd.begin() + (r + 1) * d);
    ts.insert(ts.end(), td.begin() + r * dt, td.begin() + (r + 1) * dt);
    ys.push_back(y[r]);
  }
  Dataset out;
  out.x = Tensor({rows.size(), d}, std::move(xs));
  out.t = Tensor({rows.size(), dt}, std::move(ts));
  out.y = std::move(ys);
  out.meta = meta;
  out.finalize();
  return out;
}

Tensor Dataset::label_column() const {
  std::vector<double> v(y.begin(), y.end());
  return Tensor::column(std::move(v));
}

Tensor Dataset::one_hot() const {
  const std::size_t k = meta.classes;
  std::vector<double> v(size() * k, 0.0);
  for (std::size_t i = 0; i < size(); ++i) v[i * k + y[i]] = 1.0;
  return Tensor({size(), k}, std::move(v));
}

nlohmann::json meta_to_json(const DatasetMeta& meta) {
  return {{"name", meta.name}, {"n", meta.n},       {"d", meta.d},
          {"d_t", meta.d_t},   {"classes", meta.classes}, {"seed", meta.seed},
          {"schedule", meta.schedule}};
}

DatasetMeta meta_from_json(const nlohmann::json& j) {
  DatasetMeta m;
  try {
    m.name = j.at("name").get<std::string>();
    m.n = j.at("n").get<std::size_t>();
    m.d = j.at("d").get<std::size_t>();
    m.d_t = j.at("d_t").get<std::size_t>();
    m.classes = j.at("classes").get<std::size_t>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.schedule = j.value("schedule", nlohmann::json());
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("meta", e.what());
  }
  return m;
}

}  // namespace cil
