#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "cil/datagen.hpp"
#include "cil/errors.hpp"
#include "cil/harness.hpp"
#include "cil/theorycheck.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kDiverged = 3;
constexpr int kMissingFile = 4;

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw cil::ValidationError("cannot parse list entry '" + item + "'");
    }
  }
  return out;
}

void apply_seed_list(cil::ExperimentConfig& config, const std::string& seeds) {
  if (seeds.empty()) return;
  config.seeds.clear();
  for (double s : parse_list(seeds)) config.seeds.push_back(static_cast<std::uint64_t>(s));
  config.validate();
}

void print_records(const std::vector<cil::RunRecord>& records) {
  for (const auto& r : records) {
    std::cout << r.method << " seed " << r.seed;
    if (!r.axis.empty()) std::cout << ' ' << r.axis << '=' << r.axis_value;
    std::cout << ": id " << r.id_accuracy << " ood " << r.ood_accuracy << " (" << r.config_hash << ")\n";
  }
}

void emit(const std::string& text, const std::string& out_file) {
  if (out_file.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(out_file, std::ios::binary | std::ios::trunc);
  if (!out) throw cil::Error("cannot write " + out_file);
  out << text;
}

nlohmann::json read_json(const std::string& file) {
  std::ifstream in(file);
  if (!in) throw cil::MissingFileError("cannot open " + file);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw cil::SchemaError("config", e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  cil::tune_allocator();
  CLI::App app{"Continuous-domain invariance learning laboratory"};
  app.require_subcommand(1);

  std::string config_file, seed_list, out_file, axis, values, format = "markdown", results_dir;
  bool force = false;
  std::size_t jobs = 1;
  std::uint64_t gen_seed = 0;

  auto* run_cmd = app.add_subcommand("run", "Train every seed of an experiment config");
  run_cmd->add_option("config", config_file, "experiment config (JSON)")->required();
  run_cmd->add_option("--seed-list", seed_list, "comma-separated seeds overriding the config");
  run_cmd->add_flag("--force", force, "retrain seeds that already have results");
  run_cmd->add_option("--jobs", jobs, "parallel workers");

  auto* sweep_cmd = app.add_subcommand("sweep", "Run an experiment over a list of values on one axis");
  sweep_cmd->add_option("config", config_file, "experiment config (JSON)")->required();
  sweep_cmd->add_option("--axis", axis, "split | lambda | penalty_width")->required();
  sweep_cmd->add_option("--values", values, "comma-separated axis values")->required();
  sweep_cmd->add_option("--seed-list", seed_list, "comma-separated seeds overriding the config");
  sweep_cmd->add_flag("--force", force, "retrain runs that already have results");
  sweep_cmd->add_option("--jobs", jobs, "parallel workers");

  auto* report_cmd = app.add_subcommand("report", "Summarize stored run records");
  report_cmd->add_option("dir", results_dir, "results directory")->required();
  report_cmd->add_option("--format", format, "markdown | csv | plotdata");
  report_cmd->add_option("--out", out_file, "write to a file instead of stdout");

  auto* theory_cmd = app.add_subcommand("theory", "Monte-Carlo checks of the REx failure analysis");
  theory_cmd->require_subcommand(1);
  auto* prop1_cmd = theory_cmd->add_subcommand("prop1", "Estimate the REx failure frequency");
  prop1_cmd->add_option("config", config_file, "simulation config (JSON)")->required();
  prop1_cmd->add_option("--out", out_file, "write CSV to a file instead of stdout");
  prop1_cmd->add_option("--jobs", jobs, "parallel workers");

  auto* gen_cmd = app.add_subcommand("gen", "Generate dataset snapshots from a dataset block");
  gen_cmd->add_option("config", config_file, "experiment config or bare dataset block (JSON)")->required();
  gen_cmd->add_option("--out", out_file, "snapshot directory")->required();
  gen_cmd->add_option("--seed", gen_seed, "run seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfigError;
  }

  try {
    if (*run_cmd) {
      cil::ExperimentConfig config = cil::load_config(config_file);
      apply_seed_list(config, seed_list);
      print_records(cil::run(config, {force, jobs, "", 0.0}));
    } else if (*sweep_cmd) {
      cil::ExperimentConfig config = cil::load_config(config_file);
      apply_seed_list(config, seed_list);
      print_records(cil::sweep(config, cil::axis_from_name(axis), parse_list(values), {force, jobs, "", 0.0}));
    } else if (*report_cmd) {
      emit(cil::report(cil::collect_records(results_dir), cil::format_from_name(format)), out_file);
    } else if (*prop1_cmd) {
      cil::Prop1Config c = cil::prop1_from_json(read_json(config_file));
      if (jobs > 1) c.jobs = jobs;
      const auto result = cil::simulate_rex_choice(c);
      emit(cil::prop1_csv_header() + "\n" + cil::prop1_csv_row(c, result) + "\n", out_file);
    } else if (*gen_cmd) {
      const auto j = read_json(config_file);
      const auto& block = j.contains("dataset") ? j.at("dataset") : j;
      const auto base = std::filesystem::path(config_file).parent_path();
      const auto splits = cil::build_datasets(block, gen_seed, base);
      cil::save_snapshot(splits.train, std::filesystem::path(out_file) / "train");
      cil::save_snapshot(splits.test_id, std::filesystem::path(out_file) / "test_id");
      cil::save_snapshot(splits.test_ood, std::filesystem::path(out_file) / "test_ood");
      std::cout << "wrote " << splits.train.size() << " training rows to " << out_file << '\n';
    }
  } catch (const cil::DivergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDiverged;
  } catch (const cil::MissingFileError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kMissingFile;
  } catch (const cil::SchemaError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const cil::ValidationError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const cil::SpecError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const cil::DomainError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return kOk;
}
