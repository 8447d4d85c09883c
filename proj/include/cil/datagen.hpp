#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "cil/dataset.hpp"
#include "json.hpp"

namespace cil {

struct LinearSchedule {
  double t0 = 0.0, p0 = 0.99, t1 = 100.0, p1 = 0.01;
};

struct SineSchedule {
  double mid = 0.5, amp = 0.45, period = 50.0, phase = 0.0;
};

// Piece k holds prob[k] for t in (upper[k-1], upper[k]]; t past the last bound uses the last piece.
struct StepSchedule {
  std::vector<double> upper;
  std::vector<double> prob;
};

using Schedule = std::variant<LinearSchedule, SineSchedule, StepSchedule>;

double p_s(const Schedule& schedule, double t);
nlohmann::json schedule_to_json(const Schedule& schedule);
Schedule schedule_from_json(const nlohmann::json& j);

enum class SpuriousDraw {
  shared,        // one agreement coin per sample drives the whole spurious block
  per_dimension  // every spurious coordinate draws its own coin
};

struct LogitConfig {
  std::size_t n = 2000;
  double p_v = 0.9;
  Schedule schedule = LinearSchedule{};
  double sigma = 1.0;
  std::size_t d_s = 20;
  double t_lo = 0.0, t_hi = 100.0;
  std::uint64_t seed = 0;
  SpuriousDraw draw = SpuriousDraw::shared;
  // Test-time shift: spurious agreement uses 1 - p_s(t).
  bool flip_spurious = false;
};

Dataset gen_logit(const LogitConfig& config);

struct RawDigits {
  std::size_t rows = 0, cols = 0;
  std::vector<float> pixels;  // count × rows × cols, in [0, 1]
  std::vector<std::uint8_t> labels;
  std::size_t count() const { return labels.size(); }
};

RawDigits load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

struct ColorConfig {
  double p_v = 0.75;
  Schedule schedule = StepSchedule{{512, 1024}, {0.9, 0.8}};
  std::size_t domain_count = 1024;
  std::size_t downsample = 2;  // stride used to subsample pixels before colouring
  std::uint64_t seed = 0;
};

Dataset colorize_mnist(const RawDigits& raw, const ColorConfig& config);

struct DomainFilter {
  std::optional<double> lo, hi;  // inclusive bounds; absent means unbounded
  bool contains(double t) const;
};

struct CsvSpec {
  std::vector<std::string> features;
  std::string label;
  std::string domain;
  DomainFilter train, test;
};

std::pair<Dataset, Dataset> load_csv(const std::filesystem::path& path, const CsvSpec& spec);

void save_snapshot(const Dataset& data, const std::filesystem::path& dir);
Dataset load_snapshot(const std::filesystem::path& dir);

}  // namespace cil
