#include "cil/theorycheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <thread>

#include "cil/errors.hpp"

namespace cil {

void Prop1Config::validate() const {
  if (n == 0 || envs == 0) throw ValidationError("n and |T| must be positive");
  if (n % envs != 0) throw ValidationError("n = " + std::to_string(n) + " is not divisible by |T| = " + std::to_string(envs));
  if (!(lambda_exp > 0)) throw ValidationError("lambda_exp must be positive");
  if (!(sigma_r >= 0) || !(delta >= 0) || !(lambda_rex >= 0)) throw ValidationError("sigma_r, delta and lambda_rex must be non-negative");
  if (trials == 0) throw ValidationError("trials must be positive");
}

Prop1Config prop1_from_json(const nlohmann::json& j) {
  Prop1Config c;
  try {
    c.n = j.value("n", c.n);
    c.envs = j.value("envs", c.envs);
    c.sigma_r = j.value("sigma_r", c.sigma_r);
    c.lambda_exp = j.value("lambda_exp", c.lambda_exp);
    c.delta = j.value("delta", c.delta);
    c.lambda_rex = j.value("lambda_rex", c.lambda_rex);
    c.r_bar = j.value("r_bar", c.r_bar);
    c.trials = j.value("trials", c.trials);
    c.seed = j.value("seed", c.seed);
    c.shared_sigma = j.value("shared_sigma", c.shared_sigma);
    c.jobs = j.value("jobs", c.jobs);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("prop1", e.what());
  }
  c.validate();
  return c;
}

nlohmann::json prop1_to_json(const Prop1Config& c) {
  return {{"n", c.n},           {"envs", c.envs},   {"sigma_r", c.sigma_r},       {"lambda_exp", c.lambda_exp},
          {"delta", c.delta},   {"lambda_rex", c.lambda_rex}, {"r_bar", c.r_bar}, {"trials", c.trials},
          {"seed", c.seed},     {"shared_sigma", c.shared_sigma}};
}

namespace {

std::uint64_t trial_seed(std::uint64_t seed, std::size_t trial) {
  std::seed_seq seq{seed, static_cast<std::uint64_t>(trial), std::uint64_t{0x70726f70}};
  std::uint64_t out[1];
  seq.generate(out, out + 1);
  return out[0];
}

void fill_empirical(MaskDraw& d, std::size_t per_env, std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, d.sigma);
  d.empirical.resize(d.expected.size());
  for (std::size_t t = 0; t < d.expected.size(); ++t) {
    double s = 0.0;
    for (std::size_t i = 0; i < per_env; ++i) s += noise(rng);
    d.empirical[t] = d.expected[t] + s / static_cast<double>(per_env);
  }
}

}  // namespace

TrialDraw draw_trial(const Prop1Config& c, std::size_t trial) {
  std::mt19937_64 rng(trial_seed(c.seed, trial));
  std::exponential_distribution<double> spread(c.lambda_exp);
  TrialDraw d;
  d.invariant.sigma = spread(rng);
  d.spurious.sigma = c.shared_sigma ? d.invariant.sigma : spread(rng);
  d.invariant.expected.assign(c.envs, c.r_bar + c.delta);
  d.spurious.expected.resize(c.envs);
  if (c.sigma_r > 0) {
    // R̄ is the average spurious risk over the drawn domains, so the deviations are centred.
    std::normal_distribution<double> env_risk(0.0, c.sigma_r);
    double mean = 0.0;
    for (auto& r : d.spurious.expected) mean += (r = env_risk(rng));
    mean /= static_cast<double>(c.envs);
    for (auto& r : d.spurious.expected) r = c.r_bar + (r - mean);
  } else {
    std::fill(d.spurious.expected.begin(), d.spurious.expected.end(), c.r_bar);
  }
  const std::size_t per_env = c.n / c.envs;
  fill_empirical(d.invariant, per_env, rng);
  fill_empirical(d.spurious, per_env, rng);
  return d;
}

double rex_empirical_loss(const MaskDraw& draw, double lambda_rex) {
  const auto& r = draw.empirical;
  const double k = static_cast<double>(r.size());
  double total = 0.0;
  for (double v : r) total += v;
  const double mean = total / k;
  double ss = 0.0;
  for (double v : r) ss += (v - mean) * (v - mean);
  return total + lambda_rex * ss / k;
}

Prop1Result simulate_rex_choice(const Prop1Config& c) {
  c.validate();
  Prop1Result res;
  res.trials.resize(c.trials);
  const std::size_t jobs = std::max<std::size_t>(1, std::min(c.jobs, c.trials));
  auto work = [&](std::size_t worker) {
    for (std::size_t k = worker; k < c.trials; k += jobs) {
      const TrialDraw d = draw_trial(c, k);
      res.trials[k] = {rex_empirical_loss(d.invariant, c.lambda_rex), rex_empirical_loss(d.spurious, c.lambda_rex)};
    }
  };
  if (jobs == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < jobs; ++w) pool.emplace_back(work, w);
    for (auto& th : pool) th.join();
  }
  std::size_t failures = 0;
  for (const auto& t : res.trials) failures += t.failed() ? 1 : 0;
  const double m = static_cast<double>(c.trials);
  const double p = static_cast<double>(failures) / m;
  res.fail_rate = p;
  res.std_error = std::sqrt(p * (1.0 - p) / m);
  const double z = 1.959963984540054;
  const double denom = 1.0 + z * z / m;
  const double centre = (p + z * z / (2.0 * m)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / m + z * z / (4.0 * m * m)) / denom;
  res.ci_low = std::max(0.0, centre - half);
  res.ci_high = std::min(1.0, centre + half);
  return res;
}

double g_inverse(double q, double lambda_exp) {
  if (!(lambda_exp > 0)) throw DomainError("lambda_exp must be positive");
  if (!(q > 0.5 && q < 1.0)) {
    throw DomainError("G(z) = 1 - exp(-lambda z)/2 only reaches q in (1/2, 1) for z > 0, got q = " + std::to_string(q));
  }
  return -std::log(2.0 * (1.0 - q)) / lambda_exp;
}

double prop1_threshold_envs(const Prop1Config& c) {
  if (!(c.delta > 0)) throw DomainError("the threshold needs a positive gap delta");
  return c.sigma_r * std::sqrt(static_cast<double>(c.n)) / (c.delta * g_inverse(0.75, c.lambda_exp));
}

double Decomposition::reconstruct() const {
  return expected_sum - a1 + variance_weight * (a0 + a2 + a3 - a4 - a5 + a6);
}

Decomposition decompose_terms(const MaskDraw& draw, double lambda_rex) {
  const std::size_t k = draw.expected.size();
  if (draw.empirical.size() != k || k == 0) throw ValidationError("decomposition needs matching nonempty risk vectors");
  Decomposition d;
  d.variance_weight = lambda_rex / static_cast<double>(k);
  double r_bar = 0.0, r_hat = 0.0;
  for (std::size_t t = 0; t < k; ++t) {
    d.expected_sum += draw.expected[t];
    r_bar += draw.expected[t];
    r_hat += draw.empirical[t];
  }
  r_bar /= static_cast<double>(k);
  r_hat /= static_cast<double>(k);
  const double c = r_bar - r_hat;
  double sum_a = 0.0;
  for (std::size_t t = 0; t < k; ++t) {
    const double a = draw.expected[t] - r_bar;
    const double b = draw.expected[t] - draw.empirical[t];
    sum_a += a;
    d.a0 += a * a;
    d.a1 += b;
    d.a2 += b * b;
    d.a3 += c * c;
    d.a4 += 2.0 * b * c;
    d.a5 += 2.0 * a * b;
  }
  // Σ_t (R^t − R̄) vanishes by the definition of R̄; the product is kept as computed.
  d.a6 = 2.0 * c * sum_a;
  return d;
}

std::vector<ScalingPoint> estimation_error_scaling(const Prop1Config& base, const std::vector<std::size_t>& env_counts) {
  std::vector<ScalingPoint> out;
  for (std::size_t envs : env_counts) {
    Prop1Config c = base;
    c.envs = envs;
    c.validate();
    double total = 0.0;
    for (std::size_t k = 0; k < c.trials; ++k) {
      const TrialDraw d = draw_trial(c, k);
      total += decompose_terms(d.invariant, c.lambda_rex).a2;
    }
    out.push_back({envs, total / static_cast<double>(c.trials)});
  }
  return out;
}

double loglog_slope(const std::vector<ScalingPoint>& points) {
  if (points.size() < 2) throw ValidationError("a slope needs at least two points");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double m = static_cast<double>(points.size());
  for (const auto& p : points) {
    const double x = std::log(static_cast<double>(p.envs)), y = std::log(p.mean_sq_error);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  return (m * sxy - sx * sy) / (m * sxx - sx * sx);
}

std::string prop1_csv_header() {
  return "n,envs,sigma_r,lambda_exp,delta,lambda_rex,trials,seed,failure_rate,ci_low,ci_high";
}

std::string prop1_csv_row(const Prop1Config& c, const Prop1Result& r) {
  std::ostringstream out;
  out.precision(10);
  out << c.n << ',' << c.envs << ',' << c.sigma_r << ',' << c.lambda_exp << ',' << c.delta << ',' << c.lambda_rex << ','
      << c.trials << ',' << c.seed << ',' << r.fail_rate << ',' << r.ci_low << ',' << r.ci_high;
  return out.str();
}

}  // namespace cil
