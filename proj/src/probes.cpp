#include "numvae/probes.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include <json.hpp>

#include "numvae/checkpoint.hpp"
#include "numvae/errors.hpp"

namespace numvae {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Latent collection
// ---------------------------------------------------------------------------

ProbeDataset collect_latents(VaeModel<float>& model, const std::string& dataset_dir,
                             const std::string& split, int64_t batch_size) {
  const std::string manifest_path =
      (fs::path(dataset_dir) / "manifest.jsonl").string();
  const auto manifest = load_manifest(manifest_path);
  const auto& arch = model.config();
  if (manifest.generator.canvas_h != arch.input_h ||
      manifest.generator.canvas_w != arch.input_w)
    throw ConfigError("manifest canvas " +
                      std::to_string(manifest.generator.canvas_h) + "x" +
                      std::to_string(manifest.generator.canvas_w) +
                      " does not match the model input " +
                      std::to_string(arch.input_h) + "x" +
                      std::to_string(arch.input_w));

  std::vector<const SceneRecord*> records;
  for (const auto& r : manifest.records)
    if (split.empty() || r.split == split) records.push_back(&r);
  if (records.empty())
    throw DataError("no records for split \"" + split + "\" in " +
                    manifest_path);

  ProbeDataset out;
  out.source_manifest = manifest_path;
  const auto n = static_cast<int64_t>(records.size());
  out.latents.resize(n, arch.latent_dim);
  out.numerosity.resize(static_cast<size_t>(n));
  out.cumulative_area.resize(static_cast<size_t>(n));
  out.area_available = true;
  for (const auto* r : records)
    if (!r->area_available) out.area_available = false;

  for (int64_t lo = 0; lo < n; lo += batch_size) {
    const int64_t hi = std::min(lo + batch_size, n);
    const int64_t bn = hi - lo;
    Tensor<float> x({bn, arch.input_c, arch.input_h, arch.input_w});
    parallel_for(bn, [&](int64_t i) {
      const auto* rec = records[static_cast<size_t>(lo + i)];
      const auto img =
          load_png((fs::path(dataset_dir) / rec->image_path).string());
      image_into_batch(img, x, i);
    });
    const auto enc = model.encode(x, /*train=*/false);
    for (int64_t i = 0; i < bn; ++i) {
      const auto* rec = records[static_cast<size_t>(lo + i)];
      for (int64_t d = 0; d < arch.latent_dim; ++d)
        out.latents(lo + i, d) =
            static_cast<double>(enc.mu[i * arch.latent_dim + d]);
      out.numerosity[static_cast<size_t>(lo + i)] = rec->numerosity;
      out.cumulative_area[static_cast<size_t>(lo + i)] =
          static_cast<double>(rec->cumulative_area);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Regression probe
// ---------------------------------------------------------------------------

namespace {

// population z-score; returns false on (numerically) zero variance
bool zscore(Eigen::VectorXd& v) {
  const double mean = v.mean();
  v.array() -= mean;
  const double var = v.squaredNorm() / static_cast<double>(v.size());
  if (var < 1e-24) return false;
  v /= std::sqrt(var);
  return true;
}

}  // namespace

RegressionFit fit_dimension(const ProbeDataset& probe, int dim_index) {
  if (dim_index < 0 || dim_index >= probe.dim())
    throw ShapeError("dimension index " + std::to_string(dim_index) +
                     " out of range [0, " + std::to_string(probe.dim()) + ")");
  if (!probe.area_available)
    throw ConfigError("area ground truth unavailable; regression probe needs "
                      "synthetic scenes");

  std::vector<int64_t> rows;
  for (int64_t i = 0; i < probe.size(); ++i) {
    if (probe.numerosity[static_cast<size_t>(i)] < 1) continue;
    if (probe.cumulative_area[static_cast<size_t>(i)] <= 0.0)
      throw DataError("row " + std::to_string(i) +
                      " has N >= 1 but non-positive area");
    rows.push_back(i);
  }
  const auto n = static_cast<int64_t>(rows.size());
  if (n < 3)
    throw DegenerateInputError(
        "regression needs at least 3 rows with N >= 1, have " +
        std::to_string(n));

  Eigen::VectorXd y(n), logn(n), loga(n);
  for (int64_t r = 0; r < n; ++r) {
    const int64_t i = rows[static_cast<size_t>(r)];
    y(r) = probe.latents(i, dim_index);
    logn(r) = std::log(
        static_cast<double>(probe.numerosity[static_cast<size_t>(i)]));
    loga(r) = std::log(probe.cumulative_area[static_cast<size_t>(i)]);
  }
  if (!zscore(y))
    throw DegenerateInputError("z_" + std::to_string(dim_index) +
                               " has zero variance over the fit rows");
  if (!zscore(logn))
    throw DegenerateInputError("log N has zero variance over the fit rows");
  if (!zscore(loga))
    throw DegenerateInputError("log A has zero variance over the fit rows");

  Eigen::MatrixXd X(n, 2);
  X.col(0) = logn;
  X.col(1) = loga;
  const Eigen::Vector2d beta = X.colPivHouseholderQr().solve(y);
  const double ss_res = (y - X * beta).squaredNorm();
  const double ss_tot = y.squaredNorm();  // y is centered

  RegressionFit fit;
  fit.dim_index = dim_index;
  fit.beta1 = beta(0);
  fit.beta2 = beta(1);
  fit.r_squared = std::clamp(1.0 - ss_res / ss_tot, 0.0, 1.0);
  fit.n_samples = n;
  return fit;
}

DetectorDecision classify_detector(const RegressionFit& fit,
                                   const DetectorCriteria& criteria) {
  if (criteria.r2_threshold <= 0.0 || criteria.complementary_max <= 0.0)
    throw ConfigError("detector criteria must be positive");
  DetectorDecision out;
  if (fit.r_squared < criteria.r2_threshold) return out;
  const bool numerosity_ok = std::fabs(fit.beta2) < criteria.complementary_max;
  const bool area_ok = std::fabs(fit.beta1) < criteria.complementary_max;
  if (numerosity_ok && area_ok) {
    // both coefficients tiny: side with the larger influence, flagged
    out.cls = std::fabs(fit.beta1) >= std::fabs(fit.beta2)
                  ? DetectorClass::kNumerosity
                  : DetectorClass::kArea;
    out.ambiguous = true;
  } else if (numerosity_ok) {
    out.cls = DetectorClass::kNumerosity;
  } else if (area_ok) {
    out.cls = DetectorClass::kArea;
  }
  return out;
}

DetectorReport probe_all_dimensions(const ProbeDataset& probe,
                                    const DetectorCriteria& criteria) {
  DetectorReport report;
  for (int d = 0; d < probe.dim(); ++d) {
    RegressionFit fit;
    try {
      fit = fit_dimension(probe, d);
    } catch (const DegenerateInputError& e) {
      report.failed_dims.emplace_back(d, e.what());
      continue;
    }
    report.fits.push_back(fit);
    const auto decision = classify_detector(fit, criteria);
    if (decision.ambiguous) report.ambiguous_dims.push_back(d);
    if (decision.cls == DetectorClass::kNumerosity)
      report.numerosity_detectors.push_back(d);
    else if (decision.cls == DetectorClass::kArea)
      report.area_detectors.push_back(d);
  }
  for (size_t a = 0; a < report.area_detectors.size(); ++a) {
    for (size_t b = a + 1; b < report.area_detectors.size(); ++b) {
      const int da = report.area_detectors[a], db = report.area_detectors[b];
      double sa = 0.0, sb = 0.0;
      for (const auto& f : report.fits) {
        if (f.dim_index == da) sa = f.beta2;
        if (f.dim_index == db) sb = f.beta2;
      }
      if (sa * sb < 0.0) report.opposite_sign_area_pairs.emplace_back(da, db);
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Readout
// ---------------------------------------------------------------------------

namespace {

std::shared_ptr<Stack<float>> build_readout_net(int64_t latent_dim,
                                                const ReadoutConfig& cfg) {
  if (cfg.hidden_units < 1) throw ConfigError("hidden_units must be >= 1");
  if (cfg.hidden_layers < 1) throw ConfigError("hidden_layers must be >= 1");
  auto net = std::make_shared<Stack<float>>();
  int64_t prev = latent_dim;
  for (int l = 0; l < cfg.hidden_layers; ++l) {
    net->add("fc" + std::to_string(l),
             std::make_unique<Linear<float>>(prev, cfg.hidden_units));
    net->add("act" + std::to_string(l), std::make_unique<Relu<float>>());
    prev = cfg.hidden_units;
  }
  net->add("head", std::make_unique<Linear<float>>(prev, 5));
  return net;
}

Tensor<float> to_tensor(const Eigen::MatrixXd& m) {
  Tensor<float> t({m.rows(), m.cols()});
  for (int64_t r = 0; r < m.rows(); ++r)
    for (int64_t c = 0; c < m.cols(); ++c)
      t[r * m.cols() + c] = static_cast<float>(m(r, c));
  return t;
}

// row-wise softmax in double precision
Eigen::MatrixXd softmax_rows(const Tensor<float>& logits) {
  const int64_t n = logits.shape()[0], k = logits.shape()[1];
  Eigen::MatrixXd p(n, k);
  for (int64_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t c = 0; c < k; ++c)
      mx = std::max(mx, static_cast<double>(logits[i * k + c]));
    double z = 0.0;
    for (int64_t c = 0; c < k; ++c) {
      p(i, c) = std::exp(static_cast<double>(logits[i * k + c]) - mx);
      z += p(i, c);
    }
    p.row(i) /= z;
  }
  return p;
}

}  // namespace

ReadoutModel train_readout(const Eigen::MatrixXd& latents,
                           const std::vector<int>& labels,
                           const ReadoutConfig& config) {
  const int64_t n = latents.rows();
  if (n == 0) throw ShapeError("empty latent matrix");
  if (static_cast<int64_t>(labels.size()) != n)
    throw ShapeError("label count " + std::to_string(labels.size()) +
                     " does not match " + std::to_string(n) + " latent rows");
  std::array<int64_t, 5> counts{};
  for (int l : labels) {
    if (l < 0 || l > 4)
      throw DataError("label " + std::to_string(l) + " outside {0..4}");
    counts[static_cast<size_t>(l)]++;
  }

  std::array<double, 5> w{};
  if (config.class_weights.empty()) {
    // inverse class frequency, normalized to mean 1 over present classes
    int present = 0;
    for (auto c : counts)
      if (c > 0) ++present;
    for (int c = 0; c < 5; ++c)
      if (counts[static_cast<size_t>(c)] > 0)
        w[static_cast<size_t>(c)] =
            static_cast<double>(n) /
            (static_cast<double>(present) *
             static_cast<double>(counts[static_cast<size_t>(c)]));
  } else {
    if (config.class_weights.size() != 5)
      throw ConfigError("class_weights must have 5 entries");
    for (int c = 0; c < 5; ++c) w[static_cast<size_t>(c)] = config.class_weights[static_cast<size_t>(c)];
  }

  ReadoutModel model;
  model.config = config;
  model.latent_dim = latents.cols();
  model.net = build_readout_net(model.latent_dim, config);
  Rng init_rng(derive_seed(config.seed, seed_stream::kReadout, 0));
  model.net->init(init_rng);

  std::vector<ParamRef<float>> params;
  model.net->collect_params("readout", params);
  SgdMomentum<float> opt(params, static_cast<float>(config.momentum));

  const Tensor<float> x = to_tensor(latents);
  double weight_total = 0.0;
  for (int64_t i = 0; i < n; ++i)
    weight_total += w[static_cast<size_t>(labels[static_cast<size_t>(i)])];
  if (weight_total <= 0.0) throw ConfigError("all class weights are zero");

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Tensor<float> logits = model.net->forward(x, /*train=*/true);
    const Eigen::MatrixXd p = softmax_rows(logits);
    double loss = 0.0;
    Tensor<float> dlogits({n, 5});
    for (int64_t i = 0; i < n; ++i) {
      const int y = labels[static_cast<size_t>(i)];
      const double wi = w[static_cast<size_t>(y)];
      loss -= wi * std::log(std::max(p(i, y), 1e-300));
      for (int64_t c = 0; c < 5; ++c) {
        const double grad =
            wi * (p(i, c) - (c == y ? 1.0 : 0.0)) / weight_total;
        dlogits[i * 5 + c] = static_cast<float>(grad);
      }
    }
    loss /= weight_total;
    if (!std::isfinite(loss))
      throw DivergenceError("readout loss non-finite at epoch " +
                            std::to_string(epoch));
    opt.zero_grads();
    model.net->backward(dlogits);
    opt.step(static_cast<float>(config.lr));
  }
  return model;
}

Eigen::MatrixXd ReadoutModel::scores(const Eigen::MatrixXd& latents) const {
  if (latents.cols() != latent_dim)
    throw ShapeError("latent dim " + std::to_string(latents.cols()) +
                     " does not match readout input " +
                     std::to_string(latent_dim));
  Tensor<float> logits = net->forward(to_tensor(latents), /*train=*/false);
  return softmax_rows(logits);
}

Eigen::VectorXi ReadoutModel::predict(const Eigen::MatrixXd& latents) const {
  const Eigen::MatrixXd p = scores(latents);
  Eigen::VectorXi out(p.rows());
  for (int64_t i = 0; i < p.rows(); ++i) {
    int best = 0;
    for (int c = 1; c < 5; ++c)
      if (p(i, c) > p(i, best)) best = c;
    out(i) = best;
  }
  return out;
}

void save_readout(const std::string& path, const ReadoutModel& model) {
  CheckpointFile file;
  file.meta = json{{"format_version", 1},
                   {"kind", "readout"},
                   {"latent_dim", model.latent_dim},
                   {"hidden_units", model.config.hidden_units},
                   {"hidden_layers", model.config.hidden_layers},
                   {"epochs", model.config.epochs},
                   {"lr", model.config.lr},
                   {"momentum", model.config.momentum},
                   {"seed", model.config.seed},
                   {"class_weights", model.config.class_weights}};
  std::vector<ParamRef<float>> params;
  model.net->collect_params("readout", params);
  for (const auto& p : params) {
    NamedTensor t;
    t.name = p.name;
    t.shape = p.value->shape();
    t.data.assign(p.value->data(), p.value->data() + p.value->numel());
    file.tensors.push_back(std::move(t));
  }
  save_checkpoint(path, file);
}

ReadoutModel load_readout(const std::string& path) {
  const CheckpointFile file = load_checkpoint(path);
  ReadoutModel model;
  try {
    if (file.meta.at("kind").get<std::string>() != "readout")
      throw FormatError("not a readout checkpoint: " + path);
    model.latent_dim = file.meta.at("latent_dim").get<int64_t>();
    model.config.hidden_units = file.meta.at("hidden_units").get<int>();
    model.config.hidden_layers = file.meta.at("hidden_layers").get<int>();
    model.config.epochs = file.meta.at("epochs").get<int>();
    model.config.lr = file.meta.at("lr").get<double>();
    model.config.momentum = file.meta.at("momentum").get<double>();
    model.config.seed = file.meta.at("seed").get<uint64_t>();
    model.config.class_weights =
        file.meta.at("class_weights").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw FormatError("bad readout meta in " + path + ": " + e.what());
  }
  model.net = build_readout_net(model.latent_dim, model.config);
  std::vector<ParamRef<float>> params;
  model.net->collect_params("readout", params);
  for (auto& p : params) {
    const NamedTensor* t = file.find(p.name);
    if (!t) throw FormatError("readout tensor missing: " + p.name);
    if (t->shape != p.value->shape())
      throw FormatError("readout tensor shape mismatch: " + p.name);
    std::copy(t->data.begin(), t->data.end(), p.value->data());
  }
  return model;
}

// ---------------------------------------------------------------------------
// Average precision
// ---------------------------------------------------------------------------

double average_precision(const std::vector<double>& scores,
                         const std::vector<uint8_t>& is_positive) {
  if (scores.size() != is_positive.size())
    throw ShapeError("scores/positives length mismatch");
  const auto n = static_cast<int64_t>(scores.size());
  int64_t total_pos = 0;
  for (uint8_t p : is_positive) total_pos += p;
  if (total_pos == 0)
    throw DegenerateInputError("no positive samples; AP undefined");

  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
    if (scores[static_cast<size_t>(a)] != scores[static_cast<size_t>(b)])
      return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)];
    return a < b;  // deterministic tie-break by sample index
  });

  double ap = 0.0;
  int64_t seen_pos = 0;
  for (int64_t rank = 1; rank <= n; ++rank) {
    if (!is_positive[static_cast<size_t>(order[static_cast<size_t>(rank - 1)])])
      continue;
    ++seen_pos;
    ap += static_cast<double>(seen_pos) / static_cast<double>(rank);
  }
  return ap / static_cast<double>(total_pos);
}

ReadoutEvaluation evaluate_readout(const ReadoutModel& model,
                                   const Eigen::MatrixXd& latents,
                                   const std::vector<int>& labels) {
  if (static_cast<int64_t>(labels.size()) != latents.rows())
    throw ShapeError("label count does not match latent rows");
  const Eigen::MatrixXd p = model.scores(latents);
  ReadoutEvaluation eval;
  double sum = 0.0;
  int defined = 0;
  for (int c = 0; c < 5; ++c) {
    std::vector<double> s(static_cast<size_t>(p.rows()));
    std::vector<uint8_t> pos(static_cast<size_t>(p.rows()));
    for (int64_t i = 0; i < p.rows(); ++i) {
      s[static_cast<size_t>(i)] = p(i, c);
      pos[static_cast<size_t>(i)] = labels[static_cast<size_t>(i)] == c ? 1 : 0;
    }
    try {
      eval.per_class_ap[static_cast<size_t>(c)] = average_precision(s, pos);
      eval.defined[static_cast<size_t>(c)] = true;
      sum += eval.per_class_ap[static_cast<size_t>(c)];
      ++defined;
    } catch (const DegenerateInputError&) {
      eval.defined[static_cast<size_t>(c)] = false;
      eval.warnings.push_back("class " + std::to_string(c) +
                              " has no positives; excluded from mean AP");
    }
  }
  eval.mean_ap = defined > 0 ? sum / static_cast<double>(defined) : 0.0;
  return eval;
}

// ---------------------------------------------------------------------------
// Response profiles and traversals
// ---------------------------------------------------------------------------

ResponseProfile response_profile(const ProbeDataset& probe, int dim,
                                 int n_bins_area) {
  if (dim < 0 || dim >= probe.dim())
    throw ShapeError("dimension index out of range");
  if (n_bins_area < 1) throw ConfigError("need at least one area bin");
  if (!probe.area_available)
    throw ConfigError("area ground truth unavailable");

  double amin = std::numeric_limits<double>::infinity();
  double amax = 0.0;
  for (int64_t i = 0; i < probe.size(); ++i) {
    if (probe.numerosity[static_cast<size_t>(i)] < 1) continue;
    amin = std::min(amin, probe.cumulative_area[static_cast<size_t>(i)]);
    amax = std::max(amax, probe.cumulative_area[static_cast<size_t>(i)]);
  }

  ResponseProfile prof;
  prof.dim = dim;
  prof.cells.assign(4, std::vector<ProfileCell>(static_cast<size_t>(n_bins_area)));

  struct Acc {
    int64_t n = 0;
    double sum = 0.0, sumsq = 0.0;
  };
  std::vector<std::vector<Acc>> acc(4, std::vector<Acc>(static_cast<size_t>(n_bins_area)));
  Acc zero_acc;

  const bool degenerate_range = !(amax > amin);
  prof.bin_edges.resize(static_cast<size_t>(n_bins_area) + 1);
  for (int b = 0; b <= n_bins_area; ++b) {
    const double f = static_cast<double>(b) / static_cast<double>(n_bins_area);
    prof.bin_edges[static_cast<size_t>(b)] =
        degenerate_range ? amin
                         : std::exp(std::log(amin) +
                                    f * (std::log(amax) - std::log(amin)));
  }

  for (int64_t i = 0; i < probe.size(); ++i) {
    const double z = probe.latents(i, dim);
    const int N = probe.numerosity[static_cast<size_t>(i)];
    if (N == 0) {
      zero_acc.n++;
      zero_acc.sum += z;
      zero_acc.sumsq += z * z;
      continue;
    }
    int b = 0;
    if (!degenerate_range) {
      const double t = (std::log(probe.cumulative_area[static_cast<size_t>(i)]) -
                        std::log(amin)) /
                       (std::log(amax) - std::log(amin));
      b = std::clamp(static_cast<int>(t * n_bins_area), 0, n_bins_area - 1);
    }
    auto& a = acc[static_cast<size_t>(N - 1)][static_cast<size_t>(b)];
    a.n++;
    a.sum += z;
    a.sumsq += z * z;
  }

  auto finish = [](const Acc& a) {
    ProfileCell c;
    c.count = a.n;
    if (a.n > 0) {
      c.mean_z = a.sum / static_cast<double>(a.n);
      if (a.n > 1) {
        c.std_z = std::sqrt(std::max(
            0.0, a.sumsq / static_cast<double>(a.n) - c.mean_z * c.mean_z));
        c.has_std = true;
      }
    }
    return c;
  };
  for (int r = 0; r < 4; ++r)
    for (int b = 0; b < n_bins_area; ++b)
      prof.cells[static_cast<size_t>(r)][static_cast<size_t>(b)] =
          finish(acc[static_cast<size_t>(r)][static_cast<size_t>(b)]);
  prof.zero_numerosity = finish(zero_acc);
  return prof;
}

Eigen::VectorXd dimension_stds(const ProbeDataset& probe) {
  Eigen::VectorXd out(probe.dim());
  for (int64_t d = 0; d < probe.dim(); ++d) {
    const double mean = probe.latents.col(d).mean();
    out(d) = std::sqrt((probe.latents.col(d).array() - mean).square().mean());
  }
  return out;
}

TraversalGrid latent_traversal(VaeModel<float>& model, const Tensor<float>& image,
                               const std::vector<int>& dims,
                               const std::vector<double>& deltas,
                               const Eigen::VectorXd& dim_stds) {
  const auto& arch = model.config();
  if (image.rank() != 4 || image.shape()[0] != 1 ||
      image.shape()[1] != arch.input_c || image.shape()[2] != arch.input_h ||
      image.shape()[3] != arch.input_w)
    throw ShapeError("traversal image must be (1, " +
                     std::to_string(arch.input_c) + ", " +
                     std::to_string(arch.input_h) + ", " +
                     std::to_string(arch.input_w) + ")");
  if (dim_stds.size() != arch.latent_dim)
    throw ShapeError("dim_stds length does not match the latent size");
  for (int d : dims)
    if (d < 0 || d >= arch.latent_dim)
      throw ShapeError("traversal dimension " + std::to_string(d) +
                       " out of range");

  const auto enc = model.encode(image, false);
  TraversalGrid grid;
  grid.dims = dims;
  grid.deltas = deltas;
  for (int d : dims) {
    for (double delta : deltas) {
      Tensor<float> z({1, arch.latent_dim});
      for (int64_t k = 0; k < arch.latent_dim; ++k) z[k] = enc.mu[k];
      z[d] += static_cast<float>(delta * dim_stds(d));
      grid.images.push_back(model.decode(z, false));
    }
  }
  return grid;
}

}  // namespace numvae
