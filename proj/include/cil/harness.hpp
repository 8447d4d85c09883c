#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cil/dataset.hpp"
#include "cil/objectives.hpp"
#include "cil/trainer.hpp"
#include "json.hpp"

namespace cil {

inline constexpr const char* kToolVersion = "0.1.0";

// Keeps large per-step buffers on the heap instead of mapping and unmapping them every step.
void tune_allocator();

struct ModelConfig {
  std::vector<std::size_t> phi_hidden{16};
  std::size_t z_dim = 16;
  std::size_t penalty_hidden = 64;
};

struct ExperimentConfig {
  std::string name;
  nlohmann::json dataset;  // generator or file block, resolved per run
  PenaltySpec method;
  ModelConfig model;
  TrainConfig train;
  std::vector<std::uint64_t> seeds{0};
  std::filesystem::path output = "results";
  std::filesystem::path base_dir;  // directory of the config file, for relative data paths

  void validate() const;
  // Every result-affecting field; output location and seed list are left out.
  nlohmann::json canonical() const;
  std::string hash() const;
};

ExperimentConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& file);

struct DataSplits {
  Dataset train, test_id, test_ood;
};

// Builds the train / in-distribution test / shifted test sets for one run seed.
DataSplits build_datasets(const nlohmann::json& dataset, std::uint64_t run_seed, const std::filesystem::path& base_dir);

struct RunRecord {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string name;
  std::string method;
  std::string dataset;
  std::string axis;  // empty outside sweeps
  double axis_value = 0.0;
  double id_accuracy = 0.0;
  double ood_accuracy = 0.0;
  double final_penalty = 0.0;
  double eps1 = 0.0;
  double eps2 = 0.0;
  double wall_seconds = 0.0;
  std::string tool_version = kToolVersion;
};

nlohmann::json record_to_json(const RunRecord& r);
RunRecord record_from_json(const nlohmann::json& j);

struct RunOptions {
  bool force = false;
  std::size_t jobs = 1;
  std::string axis;  // stamped onto records produced by a sweep
  double axis_value = 0.0;
};

// Trains one seed and returns its record plus artifacts; no files are touched.
struct RunArtifacts {
  RunRecord record;
  RunHistory history;
  ModelBundle bundle;
};

RunArtifacts execute_run(const ExperimentConfig& config, std::uint64_t seed);

std::vector<RunRecord> run(const ExperimentConfig& config, const RunOptions& options = {});

enum class SweepAxis { split, lambda, penalty_width };

SweepAxis axis_from_name(const std::string& name);
std::string axis_name(SweepAxis a);

std::vector<RunRecord> sweep(const ExperimentConfig& base, SweepAxis axis, const std::vector<double>& values,
                             const RunOptions& options = {});

std::vector<RunRecord> collect_records(const std::filesystem::path& dir);

enum class ReportFormat { markdown, csv, plotdata };
ReportFormat format_from_name(const std::string& name);

std::string report(const std::vector<RunRecord>& records, ReportFormat format);
std::vector<RunRecord> records_from_csv(const std::string& text);

struct Summary {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single value
  std::size_t count = 0;
};

Summary summarize(const std::vector<double>& values);

}  // namespace cil
