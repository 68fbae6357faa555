#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "numvae/layers.hpp"
#include "numvae/tensor.hpp"

namespace numvae {

// Frozen feature extractor used by the feature-space reconstruction
// loss. The builtin graph is a fixed, seeded 3-block conv net (8/16/32
// channels, kernel 3, stride 2, ReLU) with a tap after each ReLU;
// externally trained weights in the named-tensor format are a drop-in.

struct ExtractorConvSpec {
  std::string name;      // e.g. "conv1"
  int64_t in_ch = 0;
  int64_t out_ch = 0;
  int kernel = 3;
  int stride = 2;
  int pad = 1;
  std::string tap;       // tap name after the ReLU, e.g. "relu1"
};

struct FeatureExtractorSpec {
  enum class Source { kBuiltinFixed, kExternalFile };

  std::string extractor_id = "builtin3";
  std::vector<std::string> layer_names = {"relu1", "relu2", "relu3"};
  Source source = Source::kBuiltinFixed;
  uint64_t builtin_seed = 20240915;
  // Builtin weights are drawn uniform with this extra gain so feature
  // magnitudes land in a useful range for the loss; see docs.
  double builtin_gain = 2.0;
  std::string weights_path;
  int64_t input_h = 64, input_w = 64, input_c = 3;
  std::vector<double> norm_mean = {0.5, 0.5, 0.5};
  std::vector<double> norm_std = {0.5, 0.5, 0.5};
  std::vector<ExtractorConvSpec> graph;  // filled by make_builtin_graph or file header

  static std::vector<ExtractorConvSpec> make_builtin_graph(int64_t in_ch = 3) {
    return {
        {"conv1", in_ch, 8, 3, 2, 1, "relu1"},
        {"conv2", 8, 16, 3, 2, 1, "relu2"},
        {"conv3", 16, 32, 3, 2, 1, "relu3"},
    };
  }
};

// Activations for the requested tap names; keys match the request
// exactly.
template <typename T>
using ActivationSet = std::map<std::string, Tensor<T>>;

template <typename T>
class FeatureExtractor {
 public:
  explicit FeatureExtractor(FeatureExtractorSpec spec) : spec_(std::move(spec)) {
    if (spec_.graph.empty())
      spec_.graph = FeatureExtractorSpec::make_builtin_graph(spec_.input_c);
    if (spec_.layer_names.empty())
      throw ConfigError("extractor: layer_names must be non-empty");
    for (const auto& conv : spec_.graph) {
      convs_.emplace_back(std::make_unique<Conv2d<T>>(
          conv.in_ch, conv.out_ch, conv.kernel, conv.stride, conv.pad, conv.pad));
      relus_.emplace_back(std::make_unique<Relu<T>>());
    }
    if (spec_.source == FeatureExtractorSpec::Source::kBuiltinFixed) {
      Rng rng(derive_seed(spec_.builtin_seed, seed_stream::kInit));
      for (size_t i = 0; i < convs_.size(); ++i) {
        convs_[i]->init(rng);
        scale_weights(*convs_[i], static_cast<T>(spec_.builtin_gain));
      }
    }
    for (const auto& name : spec_.layer_names) tap_index(name);  // validates
  }

  const FeatureExtractorSpec& spec() const { return spec_; }

  // Index of the graph layer whose tap carries `name`.
  size_t tap_index(const std::string& name) const {
    for (size_t i = 0; i < spec_.graph.size(); ++i)
      if (spec_.graph[i].tap == name) return i;
    throw UnknownLayerError("extractor: unknown layer \"" + name + "\"");
  }

  // Forward pass collecting the requested taps. Pure given (x, params).
  ActivationSet<T> extract(const Tensor<T>& x,
                           const std::vector<std::string>& layer_names) const {
    size_t deepest = 0;
    for (const auto& n : layer_names) deepest = std::max(deepest, tap_index(n));
    Tensor<T> a = normalize(x);
    std::vector<Tensor<T>> taps;
    for (size_t i = 0; i <= deepest; ++i) {
      a = convs_[i]->forward(a, /*train=*/false);
      a = relus_[i]->forward(a, /*train=*/false);
      taps.push_back(a);
    }
    ActivationSet<T> out;
    for (const auto& n : layer_names) out.emplace(n, taps[tap_index(n)]);
    return out;
  }

  ActivationSet<T> extract(const Tensor<T>& x) const {
    return extract(x, spec_.layer_names);
  }

  // Forward with caches retained so per-tap gradients can be pushed back
  // to the input. Extractor parameters never receive gradients.
  std::vector<Tensor<T>> forward_cached(const Tensor<T>& x) {
    size_t deepest = 0;
    for (const auto& n : spec_.layer_names)
      deepest = std::max(deepest, tap_index(n));
    Tensor<T> a = normalize(x);
    std::vector<Tensor<T>> taps(deepest + 1);
    for (size_t i = 0; i <= deepest; ++i) {
      a = convs_[i]->forward(a, /*train=*/true);
      a = relus_[i]->forward(a, /*train=*/true);
      taps[i] = a;
    }
    return taps;
  }

  // Backward from per-tap gradient injections (indexed like the taps
  // returned by forward_cached) to the extractor input.
  Tensor<T> backward_to_input(const std::vector<Tensor<T>>& tap_grads) {
    const size_t deepest = tap_grads.size() - 1;
    Tensor<T> g = tap_grads[deepest];
    for (size_t i = deepest + 1; i-- > 0;) {
      g = relus_[i]->backward(g);
      g = convs_[i]->backward(g);
      if (i > 0 && tap_grads[i - 1].numel() > 0) {
        for (int64_t j = 0; j < g.numel(); ++j) g[j] += tap_grads[i - 1][j];
      }
    }
    // undo input normalization scaling
    const int64_t N = g.dim(0), C = g.dim(1), plane = g.dim(2) * g.dim(3);
    for (int64_t n = 0; n < N; ++n)
      for (int64_t c = 0; c < C; ++c) {
        const T inv = T(1) / static_cast<T>(spec_.norm_std[static_cast<size_t>(c)]);
        T* p = g.data() + (n * C + c) * plane;
        for (int64_t i = 0; i < plane; ++i) p[i] *= inv;
      }
    return g;
  }

  std::vector<ParamRef<T>> params() {
    std::vector<ParamRef<T>> out;
    for (size_t i = 0; i < convs_.size(); ++i)
      convs_[i]->collect_params(spec_.graph[i].name, out);
    return out;
  }

  size_t num_layers() const { return convs_.size(); }

 private:
  Tensor<T> normalize(const Tensor<T>& x) const {
    if (x.rank() != 4)
      throw ShapeError("extractor: expected NCHW input, got " + x.shape_str());
    if (x.dim(1) != static_cast<int64_t>(spec_.norm_mean.size()))
      throw ShapeError("extractor: channel mismatch " + x.shape_str());
    Tensor<T> y(x.shape());
    const int64_t N = x.dim(0), C = x.dim(1), plane = x.dim(2) * x.dim(3);
    for (int64_t n = 0; n < N; ++n)
      for (int64_t c = 0; c < C; ++c) {
        const T m = static_cast<T>(spec_.norm_mean[static_cast<size_t>(c)]);
        const T inv = T(1) / static_cast<T>(spec_.norm_std[static_cast<size_t>(c)]);
        const T* p = x.data() + (n * C + c) * plane;
        T* q = y.data() + (n * C + c) * plane;
        for (int64_t i = 0; i < plane; ++i) q[i] = (p[i] - m) * inv;
      }
    return y;
  }

  static void scale_weights(Conv2d<T>& conv, T gain) {
    std::vector<ParamRef<T>> refs;
    conv.collect_params("w", refs);
    for (auto& r : refs)
      for (int64_t i = 0; i < r.value->numel(); ++i) (*r.value)[i] *= gain;
  }

  FeatureExtractorSpec spec_;
  std::vector<std::unique_ptr<Conv2d<T>>> convs_;
  std::vector<std::unique_ptr<Relu<T>>> relus_;
};

// Per-layer feature MSE and its sum. Each term is the mean squared
// difference over all elements of that tap.
template <typename T>
std::pair<double, std::map<std::string, double>> feature_perceptual_loss(
    const FeatureExtractor<T>& extractor, const Tensor<T>& x,
    const Tensor<T>& x_recon) {
  const auto ax = extractor.extract(x);
  const auto ar = extractor.extract(x_recon);
  std::map<std::string, double> per_layer;
  double total = 0.0;
  for (const auto& [name, fx] : ax) {
    const Tensor<T>& fr = ar.at(name);
    double s = 0.0;
    for (int64_t i = 0; i < fx.numel(); ++i) {
      const double d = static_cast<double>(fx[i]) - static_cast<double>(fr[i]);
      s += d * d;
    }
    s /= static_cast<double>(fx.numel());
    per_layer[name] = s;
    total += s;
  }
  return {total, per_layer};
}

}  // namespace numvae
