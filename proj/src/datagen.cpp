#include "cil/datagen.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "cil/errors.hpp"

namespace cil {

double p_s(const Schedule& schedule, double t) {
  double p = 0.0;
  if (const auto* lin = std::get_if<LinearSchedule>(&schedule)) {
    const double span = lin->t1 - lin->t0;
    const double frac = span == 0.0 ? 0.0 : (t - lin->t0) / span;
    p = lin->p0 + frac * (lin->p1 - lin->p0);
  } else if (const auto* sine = std::get_if<SineSchedule>(&schedule)) {
    p = sine->mid + sine->amp * std::sin(2.0 * std::numbers::pi * t / sine->period + sine->phase);
  } else {
    const auto& step = std::get<StepSchedule>(schedule);
    p = step.prob.back();
    for (std::size_t k = 0; k < step.upper.size(); ++k) {
      if (t <= step.upper[k]) {
        p = step.prob[k];
        break;
      }
    }
  }
  return std::clamp(p, 0.0, 1.0);
}

nlohmann::json schedule_to_json(const Schedule& schedule) {
  if (const auto* lin = std::get_if<LinearSchedule>(&schedule)) {
    return {{"kind", "linear"}, {"t0", lin->t0}, {"p0", lin->p0}, {"t1", lin->t1}, {"p1", lin->p1}};
  }
  if (const auto* sine = std::get_if<SineSchedule>(&schedule)) {
    return {{"kind", "sine"}, {"mid", sine->mid}, {"amp", sine->amp}, {"period", sine->period}, {"phase", sine->phase}};
  }
  const auto& step = std::get<StepSchedule>(schedule);
  return {{"kind", "step"}, {"upper", step.upper}, {"prob", step.prob}};
}

Schedule schedule_from_json(const nlohmann::json& j) {
  std::string kind;
  try {
    kind = j.at("kind").get<std::string>();
    if (kind == "linear") {
      LinearSchedule s;
      s.t0 = j.value("t0", s.t0);
      s.p0 = j.value("p0", s.p0);
      s.t1 = j.value("t1", s.t1);
      s.p1 = j.value("p1", s.p1);
      return s;
    }
    if (kind == "sine") {
      SineSchedule s;
      s.mid = j.value("mid", s.mid);
      s.amp = j.value("amp", s.amp);
      s.period = j.value("period", s.period);
      s.phase = j.value("phase", s.phase);
      if (!(s.period > 0)) throw SchemaError("schedule.period", "must be positive");
      return s;
    }
    if (kind == "step") {
      StepSchedule s;
      s.upper = j.at("upper").get<std::vector<double>>();
      s.prob = j.at("prob").get<std::vector<double>>();
      if (s.upper.empty() || s.upper.size() != s.prob.size()) {
        throw SchemaError("schedule.upper", "needs one bound per probability");
      }
      if (!std::is_sorted(s.upper.begin(), s.upper.end())) throw SchemaError("schedule.upper", "must ascend");
      return s;
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("schedule", e.what());
  }
  throw SchemaError("schedule.kind", "unknown schedule kind '" + kind + "'");
}

namespace {

void check_probability(const char* name, double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw ValidationError(std::string(name) + " = " + std::to_string(p) + " is not a probability");
}

}  // namespace

Dataset gen_logit(const LogitConfig& c) {
  check_probability("p_v", c.p_v);
  if (c.n < 1) throw ValidationError("gen_logit needs n >= 1");
  if (!(c.sigma > 0)) throw ValidationError("sigma must be positive");
  if (!(c.t_hi >= c.t_lo)) throw ValidationError("t range is reversed");
  const std::size_t d = 2 + c.d_s;
  std::mt19937_64 rng(c.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, c.sigma);
  std::vector<double> x(c.n * d), t(c.n);
  std::vector<std::uint32_t> y(c.n);
  for (std::size_t i = 0; i < c.n; ++i) {
    t[i] = c.t_lo + (c.t_hi - c.t_lo) * unit(rng);
    y[i] = unit(rng) < 0.5 ? 1u : 0u;
    const double s = y[i] == 1 ? 1.0 : -1.0;
    double ps = p_s(c.schedule, t[i]);
    if (c.flip_spurious) ps = 1.0 - ps;
    const double v_sign = unit(rng) < c.p_v ? s : -s;
    double* row = &x[i * d];
    row[0] = v_sign + noise(rng);
    row[1] = v_sign + noise(rng);
    double s_sign = unit(rng) < ps ? s : -s;
    for (std::size_t k = 0; k < c.d_s; ++k) {
      if (c.draw == SpuriousDraw::per_dimension && k > 0) s_sign = unit(rng) < ps ? s : -s;
      row[2 + k] = s_sign + noise(rng);
    }
  }
  Dataset out;
  out.x = Tensor({c.n, d}, std::move(x));
  out.t = Tensor({c.n, 1}, std::move(t));
  out.y = std::move(y);
  out.meta.name = "logit";
  out.meta.classes = 2;
  out.meta.seed = c.seed;
  out.meta.schedule = schedule_to_json(c.schedule);
  out.meta.schedule["sigma"] = c.sigma;
  out.meta.schedule["p_v"] = c.p_v;
  out.meta.schedule["draw"] = c.draw == SpuriousDraw::shared ? "shared" : "per_dimension";
  out.meta.schedule["flip_spurious"] = c.flip_spurious;
  out.finalize();
  return out;
}

namespace {

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFileError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset, const std::string& file) {
  if (offset + 4 > bytes.size()) throw FormatError(file + ": truncated header", bytes.size());
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

}  // namespace

RawDigits load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto img = read_bytes(images);
  const auto lab = read_bytes(labels);
  const std::string in = images.filename().string(), ln = labels.filename().string();
  if (read_be32(img, 0, in) != 0x00000803) throw FormatError(in + ": bad image magic number", 0);
  if (read_be32(lab, 0, ln) != 0x00000801) throw FormatError(ln + ": bad label magic number", 0);
  const std::size_t count = read_be32(img, 4, in);
  RawDigits raw;
  raw.rows = read_be32(img, 8, in);
  raw.cols = read_be32(img, 12, in);
  const std::size_t label_count = read_be32(lab, 4, ln);
  if (label_count != count) {
    throw FormatError(ln + ": " + std::to_string(label_count) + " labels for " + std::to_string(count) + " images", 4);
  }
  const std::size_t pixels = count * raw.rows * raw.cols;
  if (img.size() < 16 + pixels) throw FormatError(in + ": truncated pixel data", img.size());
  if (lab.size() < 8 + count) throw FormatError(ln + ": truncated label data", lab.size());
  raw.pixels.resize(pixels);
  for (std::size_t i = 0; i < pixels; ++i) raw.pixels[i] = static_cast<float>(img[16 + i]) / 255.0f;
  raw.labels.assign(lab.begin() + 8, lab.begin() + 8 + static_cast<std::ptrdiff_t>(count));
  for (std::size_t i = 0; i < count; ++i) {
    if (raw.labels[i] > 9) throw FormatError(ln + ": label outside 0-9", 8 + i);
  }
  return raw;
}

Dataset colorize_mnist(const RawDigits& raw, const ColorConfig& c) {
  if (raw.count() == 0) throw ValidationError("colorize_mnist on an empty digit set");
  if (c.domain_count < 2) throw ValidationError("colorize_mnist needs at least 2 domains");
  check_probability("p_v", c.p_v);
  const std::size_t ds = std::max<std::size_t>(1, c.downsample);
  const std::size_t r = (raw.rows + ds - 1) / ds, q = (raw.cols + ds - 1) / ds;
  const std::size_t plane = r * q, d = 2 * plane, n = raw.count();
  std::mt19937_64 rng(c.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  // Blocks of integer domain indices; samples are dealt evenly across blocks.
  std::vector<std::pair<std::size_t, std::size_t>> blocks;
  if (const auto* step = std::get_if<StepSchedule>(&c.schedule)) {
    std::size_t lo = 1;
    for (double u : step->upper) {
      const auto hi = std::min<std::size_t>(c.domain_count, static_cast<std::size_t>(std::floor(u)));
      if (hi >= lo) blocks.emplace_back(lo, hi);
      lo = std::max(lo, hi + 1);
    }
    if (lo <= c.domain_count) {
      if (blocks.empty()) blocks.emplace_back(lo, c.domain_count);
      else blocks.back().second = c.domain_count;
    }
  } else {
    blocks.emplace_back(1, c.domain_count);
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<double> x(n * d, 0.0), t(n);
  std::vector<std::uint32_t> y(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t i = order[k];
    const auto [lo, hi] = blocks[k * blocks.size() / n];
    std::uniform_int_distribution<std::size_t> pick(lo, hi);
    t[k] = static_cast<double>(pick(rng));
    std::uint32_t label = raw.labels[i] < 5 ? 0u : 1u;
    if (unit(rng) >= c.p_v) label = 1u - label;
    const std::uint32_t color = unit(rng) < p_s(c.schedule, t[k]) ? label : 1u - label;
    y[k] = label;
    double* row = &x[k * d + color * plane];
    const float* img = &raw.pixels[i * raw.rows * raw.cols];
    for (std::size_t a = 0; a < r; ++a)
      for (std::size_t b = 0; b < q; ++b) row[a * q + b] = img[(a * ds) * raw.cols + b * ds];
  }
  Dataset out;
  out.x = Tensor({n, d}, std::move(x));
  out.t = Tensor({n, 1}, std::move(t));
  out.y = std::move(y);
  out.meta.name = "cmnist";
  out.meta.classes = 2;
  out.meta.seed = c.seed;
  out.meta.schedule = schedule_to_json(c.schedule);
  out.meta.schedule["p_v"] = c.p_v;
  out.meta.schedule["domain_count"] = c.domain_count;
  out.finalize();
  return out;
}

bool DomainFilter::contains(double t) const {
  if (lo && t < *lo) return false;
  if (hi && t > *hi) return false;
  return true;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_number(const std::string& text, const std::string& column) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size() || !std::isfinite(v)) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw SchemaError(column, "non-numeric value '" + text + "'");
  }
}

}  // namespace

std::pair<Dataset, Dataset> load_csv(const std::filesystem::path& path, const CsvSpec& spec) {
  std::ifstream in(path);
  if (!in) throw MissingFileError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("header", "missing header row");
  const auto header = split_csv_line(line);
  auto column = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw SchemaError(name, "column not found");
    return static_cast<std::size_t>(it - header.begin());
  };
  std::vector<std::size_t> fcols;
  for (const auto& f : spec.features) fcols.push_back(column(f));
  const std::size_t lcol = column(spec.label), dcol = column(spec.domain);

  struct Row {
    std::vector<double> x;
    std::uint32_t y;
    double t;
  };
  std::vector<Row> train, test;
  std::uint32_t max_label = 1;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) throw SchemaError("row", "cell count differs from header: " + line);
    Row row;
    for (std::size_t k = 0; k < fcols.size(); ++k) row.x.push_back(parse_number(cells[fcols[k]], spec.features[k]));
    const double label = parse_number(cells[lcol], spec.label);
    if (label < 0 || label != std::floor(label)) throw SchemaError(spec.label, "labels must be non-negative integers");
    row.y = static_cast<std::uint32_t>(label);
    max_label = std::max(max_label, row.y);
    row.t = parse_number(cells[dcol], spec.domain);
    if (spec.train.contains(row.t)) train.push_back(row);
    if (spec.test.contains(row.t)) test.push_back(row);
  }
  const std::size_t d = fcols.size();
  std::vector<double> mu(d, 0.0), sd(d, 0.0);
  for (const auto& r : train)
    for (std::size_t k = 0; k < d; ++k) mu[k] += r.x[k];
  for (auto& m : mu) m /= std::max<std::size_t>(1, train.size());
  for (const auto& r : train)
    for (std::size_t k = 0; k < d; ++k) sd[k] += (r.x[k] - mu[k]) * (r.x[k] - mu[k]);
  for (auto& s : sd) s = std::max(std::sqrt(s / std::max<std::size_t>(1, train.size())), 1e-12);

  auto build = [&](const std::vector<Row>& rows, const char* name) {
    std::vector<double> x, t;
    std::vector<std::uint32_t> y;
    for (const auto& r : rows) {
      for (std::size_t k = 0; k < d; ++k) x.push_back((r.x[k] - mu[k]) / sd[k]);
      t.push_back(r.t);
      y.push_back(r.y);
    }
    Dataset out;
    out.x = Tensor({rows.size(), d}, std::move(x));
    out.t = Tensor({rows.size(), 1}, std::move(t));
    out.y = std::move(y);
    out.meta.name = path.stem().string() + "-" + name;
    out.meta.classes = max_label + 1;
    out.finalize();
    return out;
  };
  return {build(train, "train"), build(test, "test")};
}

namespace {

template <class T>
void write_le(const std::filesystem::path& file, const std::vector<T>& values) {
  std::vector<char> bytes(values.size() * sizeof(T));
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint64_t bits = 0;
    if constexpr (sizeof(T) == 8) bits = std::bit_cast<std::uint64_t>(values[i]);
    else bits = static_cast<std::uint64_t>(values[i]);
    for (std::size_t b = 0; b < sizeof(T); ++b) bytes[i * sizeof(T) + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
  }
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + file.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

template <class T>
std::vector<T> read_le(const std::filesystem::path& file, std::size_t count) {
  const auto bytes = read_bytes(file);
  if (bytes.size() != count * sizeof(T)) {
    throw FormatError(file.filename().string() + ": expected " + std::to_string(count * sizeof(T)) + " bytes",
                      std::min(bytes.size(), count * sizeof(T)));
  }
  std::vector<T> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint64_t bits = 0;
    for (std::size_t b = 0; b < sizeof(T); ++b) bits |= std::uint64_t{bytes[i * sizeof(T) + b]} << (8 * b);
    if constexpr (sizeof(T) == 8) out[i] = std::bit_cast<double>(bits);
    else out[i] = static_cast<T>(bits);
  }
  return out;
}

}  // namespace

void save_snapshot(const Dataset& data, const std::filesystem::path& dir) {
  data.validate();
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "meta.json") << meta_to_json(data.meta).dump(2) << '\n';
  write_le(dir / "x.f64le", std::vector<double>(data.x.data().begin(), data.x.data().end()));
  write_le(dir / "y.u32le", data.y);
  write_le(dir / "t.f64le", std::vector<double>(data.t.data().begin(), data.t.data().end()));
}

Dataset load_snapshot(const std::filesystem::path& dir) {
  std::ifstream in(dir / "meta.json");
  if (!in) throw MissingFileError("cannot open " + (dir / "meta.json").string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("meta.json", e.what());
  }
  Dataset out;
  out.meta = meta_from_json(j);
  const auto& m = out.meta;
  out.x = Tensor({m.n, m.d}, read_le<double>(dir / "x.f64le", m.n * m.d));
  out.y = read_le<std::uint32_t>(dir / "y.u32le", m.n);
  out.t = Tensor({m.n, m.d_t}, read_le<double>(dir / "t.f64le", m.n * m.d_t));
  out.validate();
  return out;
}

}  // namespace cil
