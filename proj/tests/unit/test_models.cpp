#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "cil/errors.hpp"
#include "cil/models.hpp"

namespace cil {
namespace {

Dataset make_batch(std::size_t n, std::size_t d, std::uint64_t seed, std::size_t classes = 2) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Dataset ds;
  std::vector<double> x(n * d), t(n);
  for (auto& v : x) v = nd(rng);
  for (auto& v : t) v = nd(rng);
  ds.x = Tensor::matrix(n, d, x);
  ds.t = Tensor::matrix(n, 1, t);
  for (std::size_t i = 0; i < n; ++i) ds.y.push_back(static_cast<std::uint32_t>(rng() % classes));
  ds.meta.classes = classes;
  ds.finalize();
  return ds;
}

// Plain nested-loop forward used as the layer-by-layer oracle.
std::vector<double> manual_forward(const Mlp& mlp, std::vector<double> in) {
  for (std::size_t l = 0; l < mlp.weights.size(); ++l) {
    const Tensor& w = mlp.weights[l];
    std::vector<double> out(w.cols());
    for (std::size_t j = 0; j < w.cols(); ++j) {
      double acc = mlp.biases[l][j];
      for (std::size_t i = 0; i < w.rows(); ++i) acc += in[i] * w(i, j);
      const bool last = l + 1 == mlp.weights.size();
      out[j] = last ? acc : std::max(acc, 0.0);
    }
    in = out;
  }
  return in;
}

TEST(InitBundle, SameSeedBitIdentical) {
  BundleSpec spec = make_bundle_spec(21, 2, 1, {16}, 16, 64);
  ModelBundle a = init_bundle(spec, 42), b = init_bundle(spec, 42);
  EXPECT_EQ(params_to_json(a).dump(), params_to_json(b).dump());
  ModelBundle c = init_bundle(spec, 43);
  EXPECT_NE(params_to_json(a).dump(), params_to_json(c).dump());
}

TEST(InitBundle, ParameterCount) {
  MlpSpec s{{22, 16, 1}};
  EXPECT_EQ(init_mlp(s, 1).param_count(), 385u);
}

TEST(InitBundle, GlorotBoundAndZeroBias) {
  MlpSpec s{{100, 100}};
  Mlp m = init_mlp(s, 7);
  const double bound = std::sqrt(0.03);
  double widest = 0.0;
  for (double v : m.weights[0].data()) {
    EXPECT_LE(std::abs(v), bound);
    widest = std::max(widest, std::abs(v));
  }
  EXPECT_GT(widest, 0.9 * bound);
  for (double v : m.biases[0].data()) EXPECT_EQ(v, 0.0);
}

TEST(InitBundle, MismatchNamesPair) {
  BundleSpec spec = make_bundle_spec(5, 2, 1, {4}, 3, 8);
  spec.h.widths[0] = 4;
  try {
    spec.validate();
    FAIL();
  } catch (const SpecError& e) {
    EXPECT_NE(std::string(e.what()).find("h input"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("phi output"), std::string::npos);
  }
  spec = make_bundle_spec(5, 2, 1, {4}, 3, 8);
  spec.g.widths[0] = 3;
  EXPECT_THROW(init_bundle(spec, 0), SpecError);
  EXPECT_THROW(init_mlp(MlpSpec{{3}}, 0), SpecError);
  EXPECT_THROW(init_mlp(MlpSpec{{3, 0}}, 0), SpecError);
}

TEST(ForwardBundle, ZeroParametersGiveZeros) {
  ModelBundle b = init_bundle(make_bundle_spec(4, 2, 1, {8}, 6, 5), 3);
  for (Mlp* m : {&b.phi, &b.w, &b.h, &b.g})
    for (Tensor* p : m->params()) std::fill(p->mutable_data().begin(), p->mutable_data().end(), 0.0);
  Dataset batch = make_batch(5, 4, 1);
  Tape tape;
  BundleOutputs out = forward_bundle(tape, b, bind_bundle(tape, b), batch);
  for (const Var* v : {&out.logits, &out.t_h, &out.t_g})
    for (double x : v->value().data()) EXPECT_EQ(x, 0.0);
}

TEST(ForwardBundle, IdentityFeaturizerOnNonNegativeInput) {
  ModelBundle b = init_bundle(make_bundle_spec(3, 2, 1, {3}, 3, 4), 3);
  for (std::size_t l = 0; l < 2; ++l) {
    b.phi.weights[l] = Tensor::zeros({3, 3});
    for (std::size_t i = 0; i < 3; ++i) b.phi.weights[l].at(i, i) = 1.0;
  }
  Dataset batch = make_batch(4, 3, 2);
  for (double& v : batch.x.mutable_data()) v = std::abs(v);
  Tape tape;
  BundleOutputs out = forward_bundle(tape, b, bind_bundle(tape, b), batch);
  EXPECT_EQ(max_abs_diff(out.z.value(), batch.x), 0.0);
}

TEST(ForwardBundle, SingleRowMatchesManualComposition) {
  ModelBundle b = init_bundle(make_bundle_spec(6, 3, 2, {5}, 4, 7), 11);
  for (Mlp* m : {&b.phi, &b.w, &b.h, &b.g})
    for (Tensor* p : m->params())
      for (double& v : p->mutable_data()) v += 0.01;  // nonzero biases
  Dataset batch = make_batch(1, 6, 5, 3);
  Tape tape;
  BundleOutputs out = forward_bundle(tape, b, bind_bundle(tape, b), batch);
  std::vector<double> x(batch.x.data().begin(), batch.x.data().end());
  std::vector<double> z = manual_forward(b.phi, x);
  std::vector<double> logits = manual_forward(b.w, z);
  std::vector<double> th = manual_forward(b.h, z);
  std::vector<double> zy = z;
  for (std::size_t k = 0; k < 3; ++k) zy.push_back(batch.y[0] == k ? 1.0 : 0.0);
  std::vector<double> tg = manual_forward(b.g, zy);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(out.z.value()[j], z[j], 1e-14);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(out.logits.value()[j], logits[j], 1e-14);
  for (std::size_t j = 0; j < 2; ++j) {
    EXPECT_NEAR(out.t_h.value()[j], th[j], 1e-14);
    EXPECT_NEAR(out.t_g.value()[j], tg[j], 1e-14);
  }
}

TEST(ForwardBundle, WidthMismatchIsDimensionError) {
  ModelBundle b = init_bundle(make_bundle_spec(4, 2, 1, {8}, 6, 5), 3);
  Dataset batch = make_batch(3, 5, 1);
  Tape tape;
  EXPECT_THROW(forward_bundle(tape, b, bind_bundle(tape, b), batch), DimensionError);
}

TEST(ForwardBundle, PureAndRowPermutationEquivariant) {
  ModelBundle b = init_bundle(make_bundle_spec(5, 2, 1, {8}, 6, 5), 9);
  Dataset batch = make_batch(7, 5, 4);
  std::vector<std::size_t> perm{3, 0, 6, 1, 5, 2, 4};
  Dataset shuffled = batch.subset(perm);
  Tape t1, t2, t3;
  BundleOutputs a = forward_bundle(t1, b, bind_bundle(t1, b), batch);
  BundleOutputs again = forward_bundle(t3, b, bind_bundle(t3, b), batch);
  BundleOutputs p = forward_bundle(t2, b, bind_bundle(t2, b), shuffled);
  EXPECT_EQ(max_abs_diff(a.logits.value(), again.logits.value()), 0.0);
  for (std::size_t i = 0; i < perm.size(); ++i) {
    EXPECT_DOUBLE_EQ(p.logits.value()(i, 0), a.logits.value()(perm[i], 0));
    EXPECT_DOUBLE_EQ(p.t_h.value()(i, 0), a.t_h.value()(perm[i], 0));
    EXPECT_DOUBLE_EQ(p.t_g.value()(i, 0), a.t_g.value()(perm[i], 0));
  }
}

TEST(ForwardBundle, LabelBlockZeroMakesGIgnoreLabel) {
  ModelBundle b = init_bundle(make_bundle_spec(5, 2, 1, {8}, 6, 5), 9);
  Dataset batch = make_batch(6, 5, 4);
  Dataset flipped = batch;
  for (auto& y : flipped.y) y = 1 - y;
  auto g_out = [&](const Dataset& ds) {
    Tape tape;
    return forward_bundle(tape, b, bind_bundle(tape, b), ds).t_g.value();
  };
  EXPECT_GT(max_abs_diff(g_out(batch), g_out(flipped)), 0.0);
  for (std::size_t r = 6; r < 8; ++r)
    for (std::size_t c = 0; c < 5; ++c) b.g.weights[0].at(r, c) = 0.0;
  EXPECT_EQ(max_abs_diff(g_out(batch), g_out(flipped)), 0.0);
}

TEST(ApplyMask, Examples) {
  FeatureMask v{{0, 1}, 1};
  Tensor x = Tensor::matrix(2, 2, {0.3, -1.2, 2.5, 7.0});
  Tensor m = apply_mask(v, x);
  EXPECT_EQ(m(0, 0), 0.0);
  EXPECT_EQ(m(0, 1), -1.2);
  EXPECT_EQ(m(1, 1), 7.0);
  EXPECT_EQ(max_abs_diff(apply_mask(FeatureMask{{1, 1}, 1}, x), x), 0.0);
  Tensor zeroed = apply_mask(FeatureMask{{0, 0}, 1}, x);
  for (double e : zeroed.data()) EXPECT_EQ(e, 0.0);
  EXPECT_THROW(apply_mask(FeatureMask{{1, 1, 1}, 1}, x), DimensionError);
}

TEST(PredictClasses, BinaryTieGoesToZeroAndArgmaxLowestIndex) {
  EXPECT_EQ(predict_classes(Tensor::column({0.0, 0.1, -2.0})), (std::vector<std::uint32_t>{0, 1, 0}));
  EXPECT_EQ(predict_classes(Tensor::matrix(2, 3, {1, 3, 3, 5, 1, 2})), (std::vector<std::uint32_t>{1, 0}));
}

TEST(Params, JsonRoundTrip) {
  BundleSpec spec = make_bundle_spec(7, 2, 1, {16}, 16, 64);
  ModelBundle a = init_bundle(spec, 5);
  ModelBundle b = init_bundle(spec, 6);
  params_from_json(b, nlohmann::json::parse(params_to_json(a).dump()));
  EXPECT_EQ(params_to_json(a), params_to_json(b));
  nlohmann::json broken = params_to_json(a);
  broken.erase(broken.begin());
  EXPECT_ANY_THROW(params_from_json(b, broken));
}

}  // namespace
}  // namespace cil
