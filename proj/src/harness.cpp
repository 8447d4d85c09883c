#include "cil/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "cil/datagen.hpp"
#include "cil/errors.hpp"

namespace cil {

void tune_allocator() {
#if defined(M_MMAP_THRESHOLD)
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
}
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <class T>
T field(const json& j, const std::string& key, const std::string& path, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw SchemaError(path + "." + key, e.what());
  }
}

void reject_unknown(const json& j, const std::string& path, const std::set<std::string>& known) {
  if (!j.is_object()) throw SchemaError(path, "expected an object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw SchemaError(path.empty() ? key : path + "." + key, "unknown field");
  }
}

std::uint64_t derive_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  std::seed_seq seq{a, b, c};
  std::uint64_t out[1];
  seq.generate(out, out + 1);
  return out[0];
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

fs::path resolve_data(const std::string& raw, const fs::path& base_dir) {
  fs::path p(raw);
  if (p.is_absolute()) {
    if (!fs::exists(p)) throw MissingFileError("data file not found: " + p.string());
    return p;
  }
  std::vector<fs::path> candidates;
  if (!base_dir.empty()) candidates.push_back(base_dir / p);
  candidates.push_back(p);
  if (const char* root = std::getenv("CIL_DATA_DIR")) candidates.push_back(fs::path(root) / p);
  for (const auto& c : candidates) {
    if (fs::exists(c)) return c;
  }
  throw MissingFileError("data file not found: " + raw + " (also looked under CIL_DATA_DIR)");
}

const std::set<std::string> kLogitKeys{"kind", "label", "n", "test_n", "p_v", "sigma", "d_s", "t_range",
                                       "test_t_range", "test_flip", "schedule", "draw", "seed"};
const std::set<std::string> kCmnistKeys{"kind", "label", "train_images", "train_labels", "test_images", "test_labels",
                                        "p_v", "schedule", "domain_count", "test_p_s", "downsample", "train_limit",
                                        "test_limit", "seed"};
const std::set<std::string> kCsvKeys{"kind", "label", "path", "features", "label_column", "domain", "train", "test"};
const std::set<std::string> kSnapshotKeys{"kind", "label", "train", "test_id", "test_ood"};

std::vector<std::string> data_files(const json& d) {
  const std::string kind = d.at("kind").get<std::string>();
  if (kind == "cmnist") {
    return {d.at("train_images").get<std::string>(), d.at("train_labels").get<std::string>(),
            d.at("test_images").get<std::string>(), d.at("test_labels").get<std::string>()};
  }
  if (kind == "csv") return {d.at("path").get<std::string>()};
  if (kind == "snapshot") {
    std::vector<std::string> out{d.at("train").get<std::string>() + "/meta.json",
                                 d.at("test_ood").get<std::string>() + "/meta.json"};
    if (d.contains("test_id")) out.push_back(d.at("test_id").get<std::string>() + "/meta.json");
    return out;
  }
  return {};
}

void validate_dataset_block(const json& d) {
  if (!d.is_object() || !d.contains("kind")) throw SchemaError("dataset.kind", "missing dataset kind");
  const std::string kind = field<std::string>(d, "kind", "dataset", "");
  if (kind == "logit") reject_unknown(d, "dataset", kLogitKeys);
  else if (kind == "cmnist") reject_unknown(d, "dataset", kCmnistKeys);
  else if (kind == "csv") reject_unknown(d, "dataset", kCsvKeys);
  else if (kind == "snapshot") reject_unknown(d, "dataset", kSnapshotKeys);
  else throw SchemaError("dataset.kind", "unknown dataset kind '" + kind + "'");
  if (d.contains("schedule")) schedule_from_json(d.at("schedule"));
  try {
    data_files(d);
  } catch (const json::exception& e) {
    throw SchemaError("dataset", e.what());
  }
}

std::string dataset_label(const json& d) {
  if (d.contains("label")) return d.at("label").get<std::string>();
  const std::string kind = d.at("kind").get<std::string>();
  if (d.contains("schedule")) return kind + "-" + d.at("schedule").value("kind", std::string("custom"));
  return kind;
}

std::pair<double, double> range_field(const json& d, const std::string& key, std::pair<double, double> fallback) {
  if (!d.contains(key)) return fallback;
  const auto v = field<std::vector<double>>(d, key, "dataset", {});
  if (v.size() != 2 || !(v[1] >= v[0])) throw SchemaError("dataset." + key, "expected an ascending [lo, hi] pair");
  return {v[0], v[1]};
}

DomainFilter filter_field(const json& d, const std::string& key) {
  DomainFilter f;
  if (!d.contains(key)) return f;
  const json& j = d.at(key);
  if (j.contains("lo")) f.lo = j.at("lo").get<double>();
  if (j.contains("hi")) f.hi = j.at("hi").get<double>();
  return f;
}

RawDigits limited(RawDigits raw, std::size_t limit) {
  if (limit == 0 || limit >= raw.count()) return raw;
  raw.labels.resize(limit);
  raw.pixels.resize(limit * raw.rows * raw.cols);
  return raw;
}

}  // namespace

void ExperimentConfig::validate() const {
  validate_dataset_block(dataset);
  method.validate();
  train.validate();
  if (method.penalty_step > train.steps) throw SchemaError("method.penalty_step", "must not exceed train.steps");
  if (seeds.empty()) throw SchemaError("seeds", "at least one seed is required");
  std::set<std::uint64_t> unique(seeds.begin(), seeds.end());
  if (unique.size() != seeds.size()) throw SchemaError("seeds", "seeds must be distinct");
  if (model.z_dim < 1 || model.penalty_hidden < 1) throw SchemaError("model", "widths must be at least 1");
}

json ExperimentConfig::canonical() const {
  json m = {{"name", method_name(method.method)},
            {"lambda", method.lambda},
            {"split_kind", method.split_kind == SplitKind::equal ? "equal" : "quantile"},
            {"eta_q", method.eta_q},
            {"penalty_step", method.penalty_step}};
  m["split"] = method.split ? json(*method.split) : json(nullptr);
  json t = {{"lr", train.lr},
            {"olr", train.olr},
            {"steps", train.steps},
            {"batch_size", train.batch_size},
            {"optimizer", optimizer_name(train.optimizer)},
            {"update_rule", rule_name(train.rule)},
            {"standardize_t", train.standardize_t},
            {"probes", train.probes},
            {"probe_steps", train.probe_steps}};
  json md = {{"phi_hidden", model.phi_hidden}, {"z_dim", model.z_dim}, {"penalty_hidden", model.penalty_hidden}};
  return {{"dataset", dataset}, {"method", m}, {"model", md}, {"train", t}};
}

std::string ExperimentConfig::hash() const { return fnv1a_hex(canonical().dump()); }

ExperimentConfig config_from_json(const json& j, const fs::path& base_dir) {
  reject_unknown(j, "", {"name", "dataset", "method", "model", "train", "seeds", "output"});
  ExperimentConfig c;
  c.base_dir = base_dir;
  c.name = field<std::string>(j, "name", "", "experiment");
  if (!j.contains("dataset")) throw SchemaError("dataset", "missing dataset block");
  c.dataset = j.at("dataset");
  validate_dataset_block(c.dataset);

  if (!j.contains("method")) throw SchemaError("method", "missing method block");
  const json& m = j.at("method");
  reject_unknown(m, "method", {"name", "lambda", "split", "split_kind", "eta_q", "penalty_step"});
  if (!m.contains("name")) throw SchemaError("method.name", "missing method name");
  c.method.method = method_from_name(field<std::string>(m, "name", "method", ""));
  c.method.lambda = field<double>(m, "lambda", "method", c.method.method == Method::erm ? 0.0 : 1e4);
  if (m.contains("split")) c.method.split = field<std::size_t>(m, "split", "method", 1);
  const std::string sk = field<std::string>(m, "split_kind", "method", "equal");
  if (sk != "equal" && sk != "quantile") throw SchemaError("method.split_kind", "expected 'equal' or 'quantile'");
  c.method.split_kind = sk == "equal" ? SplitKind::equal : SplitKind::quantile;
  c.method.eta_q = field<double>(m, "eta_q", "method", 0.01);
  c.method.penalty_step = field<std::size_t>(m, "penalty_step", "method", 500);

  if (j.contains("model")) {
    const json& md = j.at("model");
    reject_unknown(md, "model", {"phi_hidden", "z_dim", "penalty_hidden"});
    c.model.phi_hidden = field<std::vector<std::size_t>>(md, "phi_hidden", "model", c.model.phi_hidden);
    c.model.z_dim = field<std::size_t>(md, "z_dim", "model", c.model.z_dim);
    c.model.penalty_hidden = field<std::size_t>(md, "penalty_hidden", "model", c.model.penalty_hidden);
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    reject_unknown(t, "train", {"lr", "olr", "steps", "batch_size", "optimizer", "update_rule", "standardize_t",
                                "probes", "probe_steps"});
    c.train.lr = field<double>(t, "lr", "train", c.train.lr);
    c.train.olr = field<double>(t, "olr", "train", c.train.olr);
    c.train.steps = field<std::size_t>(t, "steps", "train", c.train.steps);
    c.train.batch_size = field<std::size_t>(t, "batch_size", "train", c.train.batch_size);
    c.train.optimizer = optimizer_from_name(field<std::string>(t, "optimizer", "train", "adam"));
    c.train.rule = rule_from_name(field<std::string>(t, "update_rule", "train", rule_name(c.train.rule)));
    c.train.standardize_t = field<bool>(t, "standardize_t", "train", c.train.standardize_t);
    c.train.probes = field<std::size_t>(t, "probes", "train", c.train.probes);
    c.train.probe_steps = field<std::size_t>(t, "probe_steps", "train", c.train.probe_steps);
  }
  c.train.lambda = c.method.lambda;
  c.train.penalty_step = c.method.penalty_step;
  c.seeds = field<std::vector<std::uint64_t>>(j, "seeds", "", c.seeds);
  c.output = field<std::string>(j, "output", "", "results");
  c.validate();
  return c;
}

ExperimentConfig load_config(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw MissingFileError("cannot open config " + file.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw SchemaError("config", e.what());
  }
  return config_from_json(j, file.parent_path());
}

DataSplits build_datasets(const json& d, std::uint64_t run_seed, const fs::path& base_dir) {
  validate_dataset_block(d);
  const std::string kind = d.at("kind").get<std::string>();
  const std::uint64_t base = field<std::uint64_t>(d, "seed", "dataset", 0);
  DataSplits out;
  if (kind == "logit") {
    LogitConfig lc;
    lc.n = field<std::size_t>(d, "n", "dataset", lc.n);
    lc.p_v = field<double>(d, "p_v", "dataset", lc.p_v);
    lc.sigma = field<double>(d, "sigma", "dataset", lc.sigma);
    lc.d_s = field<std::size_t>(d, "d_s", "dataset", lc.d_s);
    std::tie(lc.t_lo, lc.t_hi) = range_field(d, "t_range", {lc.t_lo, lc.t_hi});
    if (d.contains("schedule")) lc.schedule = schedule_from_json(d.at("schedule"));
    const std::string draw = field<std::string>(d, "draw", "dataset", "shared");
    if (draw != "shared" && draw != "per_dimension") throw SchemaError("dataset.draw", "expected 'shared' or 'per_dimension'");
    lc.draw = draw == "shared" ? SpuriousDraw::shared : SpuriousDraw::per_dimension;
    lc.seed = derive_seed(base, run_seed, 0);
    out.train = gen_logit(lc);
    LogitConfig id = lc;
    id.n = field<std::size_t>(d, "test_n", "dataset", lc.n);
    id.seed = derive_seed(base, run_seed, 1);
    out.test_id = gen_logit(id);
    LogitConfig ood = id;
    std::tie(ood.t_lo, ood.t_hi) = range_field(d, "test_t_range", {lc.t_lo, lc.t_hi});
    ood.flip_spurious = field<bool>(d, "test_flip", "dataset", true);
    ood.seed = derive_seed(base, run_seed, 2);
    out.test_ood = gen_logit(ood);
  } else if (kind == "cmnist") {
    const RawDigits train_raw = limited(load_idx(resolve_data(d.at("train_images"), base_dir),
                                                 resolve_data(d.at("train_labels"), base_dir)),
                                        field<std::size_t>(d, "train_limit", "dataset", 0));
    const RawDigits test_raw = limited(load_idx(resolve_data(d.at("test_images"), base_dir),
                                                resolve_data(d.at("test_labels"), base_dir)),
                                       field<std::size_t>(d, "test_limit", "dataset", 0));
    ColorConfig cc;
    cc.p_v = field<double>(d, "p_v", "dataset", cc.p_v);
    if (d.contains("schedule")) cc.schedule = schedule_from_json(d.at("schedule"));
    cc.domain_count = field<std::size_t>(d, "domain_count", "dataset", cc.domain_count);
    cc.downsample = field<std::size_t>(d, "downsample", "dataset", cc.downsample);
    cc.seed = derive_seed(base, run_seed, 0);
    out.train = colorize_mnist(train_raw, cc);
    ColorConfig id = cc;
    id.seed = derive_seed(base, run_seed, 1);
    out.test_id = colorize_mnist(test_raw, id);
    ColorConfig ood = cc;
    ood.schedule = StepSchedule{{static_cast<double>(cc.domain_count)}, {field<double>(d, "test_p_s", "dataset", 0.1)}};
    ood.seed = derive_seed(base, run_seed, 2);
    out.test_ood = colorize_mnist(test_raw, ood);
  } else if (kind == "csv") {
    CsvSpec spec;
    spec.features = field<std::vector<std::string>>(d, "features", "dataset", {});
    spec.label = field<std::string>(d, "label_column", "dataset", "label");
    spec.domain = field<std::string>(d, "domain", "dataset", "t");
    spec.train = filter_field(d, "train");
    spec.test = filter_field(d, "test");
    auto [train, test] = load_csv(resolve_data(d.at("path"), base_dir), spec);
    out.test_id = train;
    out.train = std::move(train);
    out.test_ood = std::move(test);
  } else {
    auto dir = [&](const std::string& key) {
      return resolve_data(d.at(key).get<std::string>() + "/meta.json", base_dir).parent_path();
    };
    out.train = load_snapshot(dir("train"));
    out.test_ood = load_snapshot(dir("test_ood"));
    out.test_id = d.contains("test_id") ? load_snapshot(dir("test_id")) : out.train;
  }
  return out;
}

namespace {

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double number_or_nan(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nan("");
  return j.at(key).get<double>();
}

}  // namespace

json record_to_json(const RunRecord& r) {
  return {{"config_hash", r.config_hash},
          {"seed", r.seed},
          {"name", r.name},
          {"method", r.method},
          {"dataset", r.dataset},
          {"axis", r.axis},
          {"axis_value", r.axis_value},
          {"id_accuracy", r.id_accuracy},
          {"ood_accuracy", r.ood_accuracy},
          {"final_penalty", number_or_null(r.final_penalty)},
          {"eps1", number_or_null(r.eps1)},
          {"eps2", number_or_null(r.eps2)},
          {"wall_seconds", r.wall_seconds},
          {"tool_version", r.tool_version}};
}

RunRecord record_from_json(const json& j) {
  RunRecord r;
  try {
    r.config_hash = j.at("config_hash").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.name = j.value("name", std::string());
    r.method = j.at("method").get<std::string>();
    r.dataset = j.value("dataset", std::string());
    r.axis = j.value("axis", std::string());
    r.axis_value = j.value("axis_value", 0.0);
    r.id_accuracy = j.at("id_accuracy").get<double>();
    r.ood_accuracy = j.at("ood_accuracy").get<double>();
    r.final_penalty = number_or_nan(j, "final_penalty");
    r.eps1 = number_or_nan(j, "eps1");
    r.eps2 = number_or_nan(j, "eps2");
    r.wall_seconds = j.value("wall_seconds", 0.0);
    r.tool_version = j.value("tool_version", std::string(kToolVersion));
  } catch (const json::exception& e) {
    throw SchemaError("record", e.what());
  }
  return r;
}

RunArtifacts execute_run(const ExperimentConfig& config, std::uint64_t seed) {
  DataSplits data = build_datasets(config.dataset, seed, config.base_dir);
  const BundleSpec spec = make_bundle_spec(data.train.dim(), data.train.meta.classes, data.train.domain_dim(),
                                           config.model.phi_hidden, config.model.z_dim, config.model.penalty_hidden);
  ModelBundle bundle = init_bundle(spec, derive_seed(seed, 0x696e6974, 0));
  TrainConfig tc = config.train;
  tc.seed = derive_seed(seed, 0x62617463, 0);
  tc.lambda = config.method.lambda;
  tc.penalty_step = config.method.penalty_step;
  TrainResult result = config.method.method == Method::cil ? sgda_train(data.train, std::move(bundle), tc)
                                                           : sgd_train(data.train, std::move(bundle), config.method, tc);
  RunArtifacts a;
  RunRecord& r = a.record;
  r.config_hash = config.hash();
  r.seed = seed;
  r.name = config.name;
  r.method = method_name(config.method.method);
  r.dataset = dataset_label(config.dataset);
  r.id_accuracy = evaluate(result.bundle, data.test_id).accuracy;
  r.ood_accuracy = evaluate(result.bundle, data.test_ood).accuracy;
  r.final_penalty = result.history.steps.empty() ? std::nan("") : result.history.steps.back().penalty;
  r.eps1 = result.history.eps1;
  r.eps2 = result.history.eps2;
  r.wall_seconds = result.history.wall_seconds;
  a.history = std::move(result.history);
  a.bundle = std::move(result.bundle);
  return a;
}

namespace {

struct Task {
  ExperimentConfig config;
  std::uint64_t seed;
  std::string axis;
  double axis_value;
};

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + file.string());
  out << text;
}

std::string unique_suffix() {
  static std::atomic<std::uint64_t> counter{0};
  std::ostringstream out;
  out << std::hex << std::hash<std::thread::id>{}(std::this_thread::get_id()) << '-' << counter++;
  return out.str();
}

RunRecord run_task(const Task& task, bool force) {
  const fs::path root = task.config.output / task.config.hash();
  const fs::path final_dir = root / std::to_string(task.seed);
  const fs::path record_file = final_dir / "record.json";
  if (!force && fs::exists(record_file)) {
    std::ifstream in(record_file);
    RunRecord r = record_from_json(json::parse(in));
    r.axis = task.axis;
    r.axis_value = task.axis_value;
    return r;
  }
  fs::create_directories(root);
  const fs::path tmp = root / (".tmp-" + std::to_string(task.seed) + "-" + unique_suffix());
  fs::create_directories(tmp);
  try {
    RunArtifacts a = execute_run(task.config, task.seed);
    a.record.axis = task.axis;
    a.record.axis_value = task.axis_value;
    write_text(tmp / "history.jsonl", a.history.to_jsonl());
    write_text(tmp / "bundle.json", params_to_json(a.bundle).dump() + "\n");
    json cfg = task.config.canonical();
    cfg["seed"] = task.seed;
    write_text(tmp / "config.json", cfg.dump(2) + "\n");
    write_text(tmp / "record.json", record_to_json(a.record).dump(2) + "\n");
    if (fs::exists(final_dir)) fs::remove_all(final_dir);
    fs::rename(tmp, final_dir);
    return a.record;
  } catch (const DivergenceError& e) {
    json snap = {{"step", e.step()}, {"error", e.what()}, {"last_finite", params_to_json(e.last_finite())}};
    write_text(tmp / "diverged.json", snap.dump() + "\n");
    const fs::path failed = root / (std::to_string(task.seed) + ".diverged");
    if (fs::exists(failed)) fs::remove_all(failed);
    fs::rename(tmp, failed);
    throw;
  } catch (...) {
    std::error_code ec;
    fs::remove_all(tmp, ec);
    throw;
  }
}

void check_files(const ExperimentConfig& c) {
  for (const auto& f : data_files(c.dataset)) resolve_data(f, c.base_dir);
}

std::vector<RunRecord> run_tasks(const std::vector<Task>& tasks, const RunOptions& options) {
  std::vector<RunRecord> records(tasks.size());
  std::vector<std::exception_ptr> errors(tasks.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t k = next++; k < tasks.size(); k = next++) {
      try {
        records[k] = run_task(tasks[k], options.force);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  const std::size_t jobs = std::max<std::size_t>(1, std::min(options.jobs, tasks.size()));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < jobs; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return records;
}

}  // namespace

std::vector<RunRecord> run(const ExperimentConfig& config, const RunOptions& options) {
  config.validate();
  check_files(config);
  std::vector<Task> tasks;
  for (auto s : config.seeds) tasks.push_back({config, s, options.axis, options.axis_value});
  return run_tasks(tasks, options);
}

SweepAxis axis_from_name(const std::string& name) {
  if (name == "split") return SweepAxis::split;
  if (name == "lambda") return SweepAxis::lambda;
  if (name == "penalty_width") return SweepAxis::penalty_width;
  throw ValidationError("unknown sweep axis '" + name + "'");
}

std::string axis_name(SweepAxis a) {
  switch (a) {
    case SweepAxis::split: return "split";
    case SweepAxis::lambda: return "lambda";
    case SweepAxis::penalty_width: return "penalty_width";
  }
  return "?";
}

std::vector<RunRecord> sweep(const ExperimentConfig& base, SweepAxis axis, const std::vector<double>& values,
                             const RunOptions& options) {
  if (values.empty()) throw ValidationError("sweep needs at least one value");
  const Method m = base.method.method;
  const bool applicable = (axis == SweepAxis::split && env_based(m)) ||
                          (axis == SweepAxis::lambda && m != Method::erm && m != Method::groupdro) ||
                          (axis == SweepAxis::penalty_width && m == Method::cil);
  if (!applicable) throw ValidationError(axis_name(axis) + " sweep does not apply to " + method_name(m));
  std::vector<Task> tasks;
  for (double v : values) {
    ExperimentConfig c = base;
    switch (axis) {
      case SweepAxis::split:
        if (v < 1 || v != std::floor(v)) throw ValidationError("split values must be positive integers");
        c.method.split = static_cast<std::size_t>(v);
        break;
      case SweepAxis::lambda:
        if (v < 0) throw ValidationError("lambda values must be non-negative");
        c.method.lambda = v;
        c.train.lambda = v;
        break;
      case SweepAxis::penalty_width:
        if (v < 1 || v != std::floor(v)) throw ValidationError("penalty widths must be positive integers");
        c.model.penalty_hidden = static_cast<std::size_t>(v);
        break;
    }
    c.validate();
    for (auto s : c.seeds) tasks.push_back({c, s, axis_name(axis), v});
  }
  check_files(base);
  return run_tasks(tasks, options);
}

std::vector<RunRecord> collect_records(const fs::path& dir) {
  std::vector<RunRecord> out;
  if (!fs::exists(dir)) throw MissingFileError("results directory not found: " + dir.string());
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().filename() == "record.json") {
      std::ifstream in(entry.path());
      out.push_back(record_from_json(json::parse(in)));
    }
  }
  std::sort(out.begin(), out.end(), [](const RunRecord& a, const RunRecord& b) {
    return std::tie(a.method, a.dataset, a.axis, a.axis_value, a.config_hash, a.seed) <
           std::tie(b.method, b.dataset, b.axis, b.axis_value, b.config_hash, b.seed);
  });
  return out;
}

ReportFormat format_from_name(const std::string& name) {
  if (name == "markdown" || name == "markdown-table") return ReportFormat::markdown;
  if (name == "csv") return ReportFormat::csv;
  if (name == "plotdata") return ReportFormat::plotdata;
  throw ValidationError("unknown report format '" + name + "'");
}

Summary summarize(const std::vector<double>& values) {
  Summary s;
  s.count = values.size();
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

namespace {

std::string fmt_double(double v) {
  if (!std::isfinite(v)) return "";
  std::ostringstream out;
  out << std::setprecision(17) << v;
  return out.str();
}

std::string cell(const Summary& s) {
  if (s.count == 0) return "-";
  std::ostringstream out;
  out << std::fixed << std::setprecision(2) << 100.0 * s.mean << " (" << 100.0 * s.std << ")";
  return out.str();
}

std::string axis_cell(const RunRecord& r) {
  if (r.axis.empty()) return "";
  std::ostringstream out;
  out << std::setprecision(12) << r.axis_value;
  return out.str();
}

const char* kCsvHeader =
    "config_hash,seed,name,method,dataset,axis,axis_value,id_accuracy,ood_accuracy,final_penalty,eps1,eps2,"
    "wall_seconds,tool_version";

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_or_nan(const std::string& s) { return s.empty() ? std::nan("") : std::stod(s); }

}  // namespace

std::string report(const std::vector<RunRecord>& records, ReportFormat format) {
  if (records.empty()) throw ValidationError("report needs at least one record");
  std::ostringstream out;
  if (format == ReportFormat::csv) {
    out << kCsvHeader << '\n';
    for (const auto& r : records) {
      out << r.config_hash << ',' << r.seed << ',' << r.name << ',' << r.method << ',' << r.dataset << ',' << r.axis
          << ',' << fmt_double(r.axis_value) << ',' << fmt_double(r.id_accuracy) << ',' << fmt_double(r.ood_accuracy)
          << ',' << fmt_double(r.final_penalty) << ',' << fmt_double(r.eps1) << ',' << fmt_double(r.eps2) << ','
          << fmt_double(r.wall_seconds) << ',' << r.tool_version << '\n';
    }
    return out.str();
  }
  if (format == ReportFormat::plotdata) {
    out << "x,y,series,seed\n";
    for (const auto& r : records) {
      out << fmt_double(r.axis.empty() ? 0.0 : r.axis_value) << ',' << fmt_double(r.ood_accuracy) << ',' << r.method
          << ' ' << r.dataset << ',' << r.seed << '\n';
    }
    return out.str();
  }
  std::vector<std::string> datasets;
  std::vector<std::pair<std::string, std::string>> rows;  // (method, axis cell), first-seen order
  bool any_axis = false;
  for (const auto& r : records) {
    if (std::find(datasets.begin(), datasets.end(), r.dataset) == datasets.end()) datasets.push_back(r.dataset);
    std::pair<std::string, std::string> key{r.method, axis_cell(r)};
    if (std::find(rows.begin(), rows.end(), key) == rows.end()) rows.push_back(key);
    any_axis = any_axis || !r.axis.empty();
  }
  std::string axis_title = "value";
  for (const auto& r : records) {
    if (!r.axis.empty()) axis_title = r.axis;
  }
  out << "| method |";
  if (any_axis) out << ' ' << axis_title << " |";
  for (const auto& d : datasets) out << ' ' << d << " ID | " << d << " OOD |";
  out << " seeds |\n|---|";
  if (any_axis) out << "---|";
  for (std::size_t k = 0; k < datasets.size(); ++k) out << "---|---|";
  out << "---|\n";
  for (const auto& [method, axis] : rows) {
    out << "| " << method << " |";
    if (any_axis) out << ' ' << axis << " |";
    std::size_t seeds = 0;
    for (const auto& d : datasets) {
      std::vector<double> id, ood;
      for (const auto& r : records) {
        if (r.method == method && axis_cell(r) == axis && r.dataset == d) {
          id.push_back(r.id_accuracy);
          ood.push_back(r.ood_accuracy);
        }
      }
      seeds = std::max(seeds, id.size());
      out << ' ' << cell(summarize(id)) << " | " << cell(summarize(ood)) << " |";
    }
    out << ' ' << seeds << " |\n";
  }
  return out.str();
}

std::vector<RunRecord> records_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) throw SchemaError("csv", "unexpected header");
  std::vector<RunRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c = split_line(line);
    if (c.size() != 14) throw SchemaError("csv", "expected 14 cells: " + line);
    RunRecord r;
    r.config_hash = c[0];
    r.seed = std::stoull(c[1]);
    r.name = c[2];
    r.method = c[3];
    r.dataset = c[4];
    r.axis = c[5];
    r.axis_value = parse_or_nan(c[6]);
    r.id_accuracy = parse_or_nan(c[7]);
    r.ood_accuracy = parse_or_nan(c[8]);
    r.final_penalty = parse_or_nan(c[9]);
    r.eps1 = parse_or_nan(c[10]);
    r.eps2 = parse_or_nan(c[11]);
    r.wall_seconds = parse_or_nan(c[12]);
    r.tool_version = c[13];
    out.push_back(r);
  }
  return out;
}

}  // namespace cil
