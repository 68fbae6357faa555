#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "numvae/loss.hpp"
#include "numvae/vae.hpp"

using namespace numvae;
using namespace numvae::testing;

TEST_CASE("architecture presets trace to the documented sizes") {
  SUBCASE("desk") {
    const auto cfg = ArchitectureConfig::make("desk");
    const auto t = cfg.validate();
    REQUIRE(t.encoder_sizes.size() == 4);
    CHECK(t.encoder_sizes[0] == std::pair<int64_t, int64_t>{64, 64});
    CHECK(t.encoder_sizes[1] == std::pair<int64_t, int64_t>{32, 32});
    CHECK(t.encoder_sizes[2] == std::pair<int64_t, int64_t>{16, 16});
    CHECK(t.encoder_sizes[3] == std::pair<int64_t, int64_t>{8, 8});
    CHECK(t.flat_dim == 128 * 8 * 8);
    CHECK(cfg.latent_dim == 32);
  }
  SUBCASE("paper") {
    const auto cfg = ArchitectureConfig::make("paper");
    const auto t = cfg.validate();
    REQUIRE(t.encoder_sizes.size() == 4);
    CHECK(t.encoder_sizes[0] == std::pair<int64_t, int64_t>{160, 160});
    CHECK(t.encoder_sizes[3] == std::pair<int64_t, int64_t>{20, 20});
    CHECK(t.flat_dim == 768 * 20 * 20);
    CHECK(cfg.latent_dim == 180);
    CHECK(t.decoder_sizes.back() == std::pair<int64_t, int64_t>{160, 160});
  }
  SUBCASE("tiny") {
    const auto cfg = ArchitectureConfig::make("tiny");
    const auto t = cfg.validate();
    CHECK(t.flat_dim == 8 * 4 * 4);
  }
  SUBCASE("unknown preset throws") {
    CHECK_THROWS_AS(ArchitectureConfig::make("gigantic"), ConfigError);
  }
  SUBCASE("mismatched decoder is rejected") {
    auto cfg = ArchitectureConfig::make("desk");
    cfg.decoder_layers.pop_back();
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
}

TEST_CASE("kl divergence matches hand-computed values") {
  // 0.5 * (mu^2 + sigma^2 - ln sigma^2 - 1) summed over dimensions
  double mu[2] = {0.0, 0.0};
  double sg[2] = {1.0, 1.0};
  CHECK(kl_divergence(mu, sg, 2) == doctest::Approx(0.0));

  mu[0] = 1.0;
  CHECK(kl_divergence(mu, sg, 2) == doctest::Approx(0.5));

  mu[0] = 0.0; sg[0] = 2.0;
  CHECK(kl_divergence(mu, sg, 1) ==
        doctest::Approx(0.5 * (4.0 - std::log(4.0) - 1.0)));

  sg[0] = -1.0;
  CHECK_THROWS_AS(kl_divergence(mu, sg, 1), DomainError);
  sg[0] = 0.0;
  CHECK_THROWS_AS(kl_divergence(mu, sg, 1), DomainError);
}

TEST_CASE("kl divergence agrees with a monte-carlo estimate") {
  // E_q[log q(z) - log p(z)] estimated with 400k reparametrized draws.
  const int64_t dim = 4;
  EncoderOutputT<double> enc{Tensor<double>({1, dim}), Tensor<double>({1, dim})};
  const double mus[4] = {0.3, -1.1, 0.0, 2.0};
  const double sgs[4] = {1.0, 0.5, 2.0, 0.8};
  for (int64_t i = 0; i < dim; ++i) {
    enc.mu[i] = mus[i];
    enc.sigma[i] = sgs[i];
  }
  const double analytic = kl_divergence(enc);

  Rng rng(20240901);
  const int n = 400000;
  double acc = 0.0;
  for (int s = 0; s < n; ++s) {
    double term = 0.0;
    for (int64_t i = 0; i < dim; ++i) {
      const double eps = rng.normal();
      const double z = mus[i] + sgs[i] * eps;
      // log q - log p = -log sigma - eps^2/2 + z^2/2
      term += -std::log(sgs[i]) - 0.5 * eps * eps + 0.5 * z * z;
    }
    acc += term;
  }
  const double mc = acc / n;
  CHECK(mc == doctest::Approx(analytic).epsilon(0.01));
}

TEST_CASE("reparametrization is exact and replayable") {
  EncoderOutputT<double> enc{Tensor<double>({2, 3}), Tensor<double>({2, 3})};
  Tensor<double> eps({2, 3});
  Rng rng(7);
  for (int64_t i = 0; i < 6; ++i) {
    enc.mu[i] = rng.normal();
    enc.sigma[i] = 0.5 + rng.uniform();
    eps[i] = rng.normal();
  }
  Tensor<double> z = reparametrize(enc, eps);
  for (int64_t i = 0; i < 6; ++i)
    CHECK(z[i] == doctest::Approx(enc.mu[i] + enc.sigma[i] * eps[i]));

  SUBCASE("null rng means z = mu") {
    auto s = sample_latent(enc, static_cast<Rng*>(nullptr));
    for (int64_t i = 0; i < 6; ++i) {
      CHECK(s.noise[i] == 0.0);
      CHECK(s.z[i] == enc.mu[i]);
    }
  }
  SUBCASE("sampled moments match the posterior") {
    double m = 0.0, v = 0.0;
    const int reps = 20000;
    Rng noise_rng(99);
    for (int r = 0; r < reps; ++r) {
      auto s = sample_latent(enc, &noise_rng);
      m += s.z[0];
      v += (s.z[0] - enc.mu[0]) * (s.z[0] - enc.mu[0]);
    }
    m /= reps;
    v /= reps;
    CHECK(m == doctest::Approx(enc.mu[0]).epsilon(0.05));
    CHECK(std::sqrt(v) == doctest::Approx(enc.sigma[0]).epsilon(0.05));
  }
}

TEST_CASE("loss composition is the weighted sum of enabled terms") {
  std::map<std::string, double> per_layer{{"relu1", 2.0}, {"relu2", 3.0}};
  auto b = compose_total_loss(10.0, 7.0, per_layer, 1.0, 0.03, false, true);
  CHECK(b.total == doctest::Approx(10.0 + 0.03 * 5.0));
  CHECK(b.reconstruction_sum() == doctest::Approx(5.0));

  b = compose_total_loss(10.0, 7.0, per_layer, 1.0, 0.03, true, true);
  CHECK(b.total == doctest::Approx(10.0 + 0.03 * 12.0));

  b = compose_total_loss(10.0, 7.0, per_layer, 0.5, 0.1, true, false);
  CHECK(b.total == doctest::Approx(5.0 + 0.1 * 7.0));

  CHECK_THROWS_AS(compose_total_loss(1, 1, {}, -1.0, 0.1, true, true),
                  DomainError);
}

TEST_CASE("vae encode/decode shapes on the tiny preset") {
  VaeModel<float> model(ArchitectureConfig::make("tiny"));
  model.init(1234);
  Tensor<float> x({3, 3, 8, 8});
  Rng rng(5);
  for (int64_t i = 0; i < x.numel(); ++i)
    x[i] = static_cast<float>(rng.uniform());
  auto enc = model.encode(x, false);
  CHECK(enc.mu.shape() == std::vector<int64_t>{3, 4});
  CHECK(enc.sigma.shape() == std::vector<int64_t>{3, 4});
  for (int64_t i = 0; i < enc.sigma.numel(); ++i) CHECK(enc.sigma[i] > 0.0f);
  Tensor<float> recon = model.decode(enc.mu, false);
  CHECK(recon.shape() == x.shape());
  for (int64_t i = 0; i < recon.numel(); ++i) {
    CHECK(recon[i] >= 0.0f);
    CHECK(recon[i] <= 1.0f);
  }
}

TEST_CASE("fresh posterior starts near N(0,1) thanks to the sigma offset") {
  VaeModel<float> model(ArchitectureConfig::make("tiny"));
  model.init(77);
  Tensor<float> x({4, 3, 8, 8});
  Rng rng(6);
  for (int64_t i = 0; i < x.numel(); ++i)
    x[i] = static_cast<float>(rng.uniform());
  auto enc = model.encode(x, false);
  double mean_sigma = 0.0;
  for (int64_t i = 0; i < enc.sigma.numel(); ++i) mean_sigma += enc.sigma[i];
  mean_sigma /= static_cast<double>(enc.sigma.numel());
  CHECK(mean_sigma == doctest::Approx(1.0).epsilon(0.35));
}

namespace {

// Full end-to-end gradient check of the composite objective on the tiny
// preset.
void check_full_model(const LossOptions& opt, FeatureExtractor<double>* ext,
                      uint64_t seed) {
  VaeModel<double> model(ArchitectureConfig::make("tiny"));
  model.init(seed);
  Rng rng(seed + 1);
  Tensor<double> x({2, 3, 8, 8});
  for (int64_t i = 0; i < x.numel(); ++i) x[i] = rng.uniform();
  Tensor<double> eps({2, 4});
  fill_normal(eps, rng);

  auto params = model.params();
  for (auto& p : params)
    if (!p.is_buffer) p.grad->fill(0.0);

  vae_training_step(model, ext, x, eps, opt, /*train=*/true, /*with_grads=*/true);

  auto loss = [&]() {
    return vae_training_step(model, ext, x, eps, opt, true, false).loss.total;
  };
  const auto r = finite_diff_check(params, loss);
  CAPTURE(r.worst_name);
  CAPTURE(r.worst_rel);
  CAPTURE(r.checked);
  CHECK(r.pass_fraction() >= 0.99);
}

}  // namespace

TEST_CASE("full-model gradients: kl + pixel loss") {
  LossOptions opt;
  opt.perceptual_enabled = false;
  opt.pixel_enabled = true;
  check_full_model(opt, nullptr, 2024);
}

TEST_CASE("full-model gradients: kl + builtin perceptual loss") {
  FeatureExtractorSpec spec;
  spec.input_h = 8;
  spec.input_w = 8;
  FeatureExtractor<double> ext(spec);
  LossOptions opt;  // perceptual on, pixel off: the training default
  check_full_model(opt, &ext, 4048);
}

TEST_CASE("perceptual loss can be combined with the pixel term") {
  FeatureExtractorSpec spec;
  spec.input_h = 8;
  spec.input_w = 8;
  FeatureExtractor<double> ext(spec);
  LossOptions opt;
  opt.pixel_enabled = true;
  check_full_model(opt, &ext, 31415);
}
