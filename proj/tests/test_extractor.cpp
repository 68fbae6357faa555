#include <doctest.h>

#include "gradcheck.hpp"
#include "numvae/extractor.hpp"

using namespace numvae;
using namespace numvae::testing;

namespace {

FeatureExtractorSpec small_spec() {
  FeatureExtractorSpec spec;
  spec.input_h = 16;
  spec.input_w = 16;
  return spec;
}

Tensor<double> random_image(int64_t n, int64_t hw, uint64_t seed) {
  Tensor<double> x({n, 3, hw, hw});
  Rng rng(seed);
  for (int64_t i = 0; i < x.numel(); ++i) x[i] = rng.uniform();
  return x;
}

}  // namespace

TEST_CASE("builtin extractor taps have the documented shapes") {
  FeatureExtractor<float> ext(small_spec());
  Tensor<float> x({2, 3, 16, 16});
  auto acts = ext.extract(x);
  REQUIRE(acts.count("relu1") == 1);
  REQUIRE(acts.count("relu2") == 1);
  REQUIRE(acts.count("relu3") == 1);
  CHECK(acts.at("relu1").shape() == std::vector<int64_t>{2, 8, 8, 8});
  CHECK(acts.at("relu2").shape() == std::vector<int64_t>{2, 16, 4, 4});
  CHECK(acts.at("relu3").shape() == std::vector<int64_t>{2, 32, 2, 2});
}

TEST_CASE("requesting an unknown tap throws") {
  FeatureExtractor<float> ext(small_spec());
  Tensor<float> x({1, 3, 16, 16});
  CHECK_THROWS_AS(ext.extract(x, {"relu9"}), UnknownLayerError);

  auto bad = small_spec();
  bad.layer_names = {"block_5"};
  CHECK_THROWS_AS((FeatureExtractor<float>{bad}), UnknownLayerError);
}

TEST_CASE("two extractors with the same spec agree bitwise") {
  FeatureExtractor<double> a(small_spec());
  FeatureExtractor<double> b(small_spec());
  const auto x = random_image(1, 16, 3);
  const auto ax = a.extract(x);
  const auto bx = b.extract(x);
  for (const auto& [name, t] : ax) {
    const auto& u = bx.at(name);
    REQUIRE(t.same_shape(u));
    for (int64_t i = 0; i < t.numel(); ++i) REQUIRE(t[i] == u[i]);
  }
}

TEST_CASE("a different builtin seed changes the features") {
  auto s2 = small_spec();
  s2.builtin_seed = 1;
  FeatureExtractor<double> a(small_spec());
  FeatureExtractor<double> b(s2);
  const auto x = random_image(1, 16, 3);
  const auto ax = a.extract(x);
  const auto bx = b.extract(x);
  double diff = 0.0;
  for (const auto& [name, t] : ax)
    for (int64_t i = 0; i < t.numel(); ++i) diff += std::fabs(t[i] - bx.at(name)[i]);
  CHECK(diff > 1e-3);
}

TEST_CASE("perceptual loss is zero iff the inputs match") {
  FeatureExtractor<double> ext(small_spec());
  const auto x = random_image(2, 16, 5);
  auto [total, per_layer] = feature_perceptual_loss(ext, x, x);
  CHECK(total == 0.0);
  REQUIRE(per_layer.size() == 3);
  for (const auto& [_, v] : per_layer) CHECK(v == 0.0);

  auto y = x;
  y[10] += 0.25;
  auto [total2, per_layer2] = feature_perceptual_loss(ext, x, y);
  CHECK(total2 > 0.0);
  // total is exactly the sum of the per-layer means
  double s = 0.0;
  for (const auto& [_, v] : per_layer2) s += v;
  CHECK(total2 == doctest::Approx(s));
}

TEST_CASE("perceptual loss is symmetric") {
  FeatureExtractor<double> ext(small_spec());
  const auto x = random_image(1, 16, 8);
  const auto y = random_image(1, 16, 9);
  auto [axy, _1] = feature_perceptual_loss(ext, x, y);
  auto [ayx, _2] = feature_perceptual_loss(ext, y, x);
  CHECK(axy == doctest::Approx(ayx));
}

TEST_CASE("backward_to_input matches finite differences of the loss") {
  FeatureExtractorSpec spec;
  spec.input_h = 8;
  spec.input_w = 8;
  FeatureExtractor<double> ext(spec);
  const auto target = random_image(1, 8, 11);
  auto x = random_image(1, 8, 12);

  auto loss = [&]() {
    return feature_perceptual_loss(ext, target, x).first;
  };

  // analytic: d/dx sum_l mean((phi_l(x) - phi_l(target))^2)
  const auto tacts = ext.extract(target);
  auto taps = ext.forward_cached(x);
  std::vector<Tensor<double>> tap_grads(taps.size());
  for (const auto& name : ext.spec().layer_names) {
    const size_t idx = ext.tap_index(name);
    const auto& a = taps[idx];
    const auto& t = tacts.at(name);
    Tensor<double> g(a.shape());
    const double scale = 2.0 / static_cast<double>(a.numel());
    for (int64_t i = 0; i < a.numel(); ++i) g[i] = scale * (a[i] - t[i]);
    tap_grads[idx] = std::move(g);
  }
  Tensor<double> gx = ext.backward_to_input(tap_grads);

  const auto r = finite_diff_check_input(x, gx, loss);
  CAPTURE(r.worst_rel);
  CHECK(r.pass_fraction() >= 0.99);
}

TEST_CASE("extractor weights never change") {
  FeatureExtractor<double> ext(small_spec());
  std::vector<double> before;
  for (const auto& p : ext.params())
    before.insert(before.end(), p.value->data(),
                  p.value->data() + p.value->numel());

  const auto x = random_image(2, 16, 21);
  const auto y = random_image(2, 16, 22);
  (void)feature_perceptual_loss(ext, x, y);
  auto taps = ext.forward_cached(y);
  std::vector<Tensor<double>> gs(taps.size());
  for (size_t i = 0; i < taps.size(); ++i) {
    gs[i] = Tensor<double>(taps[i].shape());
    gs[i].fill(0.01);
  }
  (void)ext.backward_to_input(gs);

  std::vector<double> after;
  for (const auto& p : ext.params())
    after.insert(after.end(), p.value->data(),
                 p.value->data() + p.value->numel());
  CHECK(before == after);
}

TEST_CASE("input normalization is applied before the first conv") {
  // Extractor A normalizes with mean 0.5 / std 0.5; extractor B with the
  // identity transform. Feeding B the externally normalized image must
  // reproduce A's taps exactly (both share the same builtin weights).
  FeatureExtractor<double> a(small_spec());
  auto ident = small_spec();
  ident.norm_mean = {0.0, 0.0, 0.0};
  ident.norm_std = {1.0, 1.0, 1.0};
  FeatureExtractor<double> b(ident);

  const auto x = random_image(1, 16, 33);
  Tensor<double> xn(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) xn[i] = (x[i] - 0.5) / 0.5;

  const auto ax = a.extract(x);
  const auto bx = b.extract(xn);
  for (const auto& [name, t] : ax) {
    const auto& u = bx.at(name);
    for (int64_t i = 0; i < t.numel(); ++i)
      REQUIRE(t[i] == doctest::Approx(u[i]).epsilon(1e-12));
  }
}
