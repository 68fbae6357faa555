#pragma once

#include <map>
#include <string>

#include "numvae/extractor.hpp"
#include "numvae/vae.hpp"

namespace numvae {

// Weights and switches for the composite training objective
//   total = alpha * KL + beta * (perceptual [+ pixel]).
struct LossOptions {
  double alpha = 1.0;
  double beta = 0.03;
  bool perceptual_enabled = true;
  bool pixel_enabled = false;
};

template <typename T>
struct VaeStepOutput {
  EncoderOutputT<T> enc;
  Tensor<T> z;
  Tensor<T> recon;
  LossBreakdown loss;
};

// Runs one batch through the model, evaluates every enabled loss term,
// and (optionally) backpropagates the weighted total into the parameter
// gradients of `model`. The extractor itself stays frozen: its weights
// receive no gradient, it only routes gradients back to the
// reconstruction. `eps` is the reparametrization noise (pass zeros for
// the deterministic z = mu path). Gradients accumulate, so call
// zero_grads() on the optimizer between steps.
template <typename T>
VaeStepOutput<T> vae_training_step(VaeModel<T>& model,
                                   FeatureExtractor<T>* extractor,
                                   const Tensor<T>& x, const Tensor<T>& eps,
                                   const LossOptions& opt, bool train,
                                   bool with_grads) {
  if (opt.perceptual_enabled && !extractor)
    throw ConfigError("perceptual loss enabled but no feature extractor given");
  VaeStepOutput<T> out;
  out.enc = model.encode(x, train);
  out.z = reparametrize(out.enc, eps);
  out.recon = model.decode(out.z, train);

  const double kl = kl_divergence(out.enc);
  double pixel = 0.0;
  std::map<std::string, double> per_layer;

  Tensor<T> drecon;
  if (with_grads) drecon = Tensor<T>(out.recon.shape());

  if (opt.pixel_enabled) {
    pixel = pixel_reconstruction_loss(x, out.recon);
    if (with_grads) {
      const double scale = opt.beta * 2.0 / static_cast<double>(x.numel());
      for (int64_t i = 0; i < drecon.numel(); ++i)
        drecon[i] += static_cast<T>(scale * (static_cast<double>(out.recon[i]) -
                                             static_cast<double>(x[i])));
    }
  }

  if (opt.perceptual_enabled) {
    const auto targets = extractor->extract(x);
    if (with_grads) {
      auto taps = extractor->forward_cached(out.recon);
      std::vector<Tensor<T>> tap_grads(taps.size());
      for (const auto& name : extractor->spec().layer_names) {
        const size_t idx = extractor->tap_index(name);
        const Tensor<T>& a = taps[idx];
        const Tensor<T>& t = targets.at(name);
        const double scale = opt.beta * 2.0 / static_cast<double>(a.numel());
        Tensor<T> g(a.shape());
        double s = 0.0;
        for (int64_t i = 0; i < a.numel(); ++i) {
          const double d =
              static_cast<double>(a[i]) - static_cast<double>(t[i]);
          s += d * d;
          g[i] = static_cast<T>(scale * d);
        }
        per_layer[name] = s / static_cast<double>(a.numel());
        tap_grads[idx] = std::move(g);
      }
      Tensor<T> dx_perc = extractor->backward_to_input(tap_grads);
      for (int64_t i = 0; i < drecon.numel(); ++i) drecon[i] += dx_perc[i];
    } else {
      const auto recon_acts = extractor->extract(out.recon);
      for (const auto& [name, t] : targets) {
        const Tensor<T>& a = recon_acts.at(name);
        double s = 0.0;
        for (int64_t i = 0; i < a.numel(); ++i) {
          const double d =
              static_cast<double>(a[i]) - static_cast<double>(t[i]);
          s += d * d;
        }
        per_layer[name] = s / static_cast<double>(a.numel());
      }
    }
  }

  out.loss = compose_total_loss(kl, pixel, per_layer, opt.alpha, opt.beta,
                                opt.pixel_enabled, opt.perceptual_enabled);

  if (with_grads) {
    Tensor<T> dz = model.decoder().backward(drecon);
    // chain rule through z = mu + sigma .* eps, plus the closed-form KL
    // gradients d(KL)/dmu = mu and d(KL)/dsigma = sigma - 1/sigma,
    // averaged over the batch.
    const int64_t n = out.enc.mu.dim(0);
    const double kscale = opt.alpha / static_cast<double>(n);
    Tensor<T> dmu(out.enc.mu.shape());
    Tensor<T> dsigma(out.enc.sigma.shape());
    for (int64_t i = 0; i < dmu.numel(); ++i) {
      const double mu = static_cast<double>(out.enc.mu[i]);
      const double sd = static_cast<double>(out.enc.sigma[i]);
      dmu[i] = dz[i] + static_cast<T>(kscale * mu);
      dsigma[i] = dz[i] * eps[i] + static_cast<T>(kscale * (sd - 1.0 / sd));
    }
    model.encoder().backward(dmu, dsigma);
  }
  return out;
}

}  // namespace numvae
