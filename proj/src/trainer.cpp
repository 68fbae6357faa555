#include "numvae/trainer.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "numvae/checkpoint.hpp"
#include "numvae/errors.hpp"

namespace numvae {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

TrainConfig TrainConfig::make(const std::string& preset) {
  TrainConfig c;
  if (preset == "paper") {
    c.total_epochs = 140;
    c.warmup_epochs = 20;
    c.mix_ramp_end_epoch = 60;
  } else if (preset == "desk") {
    // defaults as declared: 30 epochs, warmup 10, ramp to 15
  } else if (preset == "tiny") {
    c.total_epochs = 5;
    c.warmup_epochs = 2;
    c.mix_ramp_end_epoch = 3;
    c.batch_size = 8;
  } else {
    throw ConfigError("unknown train preset \"" + preset + "\"");
  }
  return c;
}

void TrainConfig::validate() const {
  if (lr_initial <= 0.0) throw ConfigError("lr_initial must be positive");
  if (lr_decay_factor <= 1.0)
    throw ConfigError("lr_decay_factor must be greater than 1");
  if (rebalance_fraction < 0.0 || rebalance_fraction >= 1.0)
    throw ConfigError("rebalance_fraction must be in [0, 1)");
  if (!(warmup_epochs <= mix_ramp_end_epoch &&
        mix_ramp_end_epoch <= total_epochs))
    throw ConfigError(
        "need warmup_epochs <= mix_ramp_end_epoch <= total_epochs");
  if (plateau_epochs < 1) throw ConfigError("plateau_epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (total_epochs < 1) throw ConfigError("total_epochs must be >= 1");
  if (mix_target_fraction < 0.0 || mix_target_fraction > 1.0)
    throw ConfigError("mix_target_fraction must be in [0, 1]");
  if (momentum < 0.0 || momentum >= 1.0)
    throw ConfigError("momentum must be in [0, 1)");
}

// ---------------------------------------------------------------------------
// Schedules
// ---------------------------------------------------------------------------

double lr_schedule_step(const std::vector<double>& val_history,
                        double current_lr, const TrainConfig& config) {
  if (val_history.empty())
    throw ConfigError("lr_schedule_step needs a non-empty history");
  // Replay: the first epoch seeds the running best and opens the streak;
  // later epochs reset it only on a sufficient relative improvement.
  double best = val_history[0];
  int streak = 1;
  bool decayed_at_last = false;
  for (size_t e = 1; e < val_history.size(); ++e) {
    const double v = val_history[e];
    const bool improved =
        v < best * (1.0 - config.plateau_min_rel_improvement);
    streak = improved ? 0 : streak + 1;
    best = std::min(best, v);
    if (streak > config.plateau_epochs) {
      decayed_at_last = (e + 1 == val_history.size());
      streak = 0;  // keeps decay events >= plateau_epochs apart
    }
  }
  // A history of length 1 can itself overflow the streak only when
  // plateau_epochs == 0, which validate() forbids.
  if (val_history.size() == 1 && streak > config.plateau_epochs)
    decayed_at_last = true;
  return decayed_at_last ? current_lr / config.lr_decay_factor : current_lr;
}

double mix_schedule(int epoch, const TrainConfig& config) {
  if (epoch < 0) throw ConfigError("epoch must be >= 0");
  if (epoch < config.warmup_epochs) return 0.0;
  if (epoch >= config.mix_ramp_end_epoch) return config.mix_target_fraction;
  const double span =
      static_cast<double>(config.mix_ramp_end_epoch - config.warmup_epochs);
  return config.mix_target_fraction *
         static_cast<double>(epoch - config.warmup_epochs) / span;
}

// ---------------------------------------------------------------------------
// Rebalancing
// ---------------------------------------------------------------------------

DatasetManifest rebalance_dataset(const DatasetManifest& manifest,
                                  double fraction, uint64_t seed) {
  if (fraction < 0.0 || fraction >= 1.0)
    throw ConfigError("rebalance fraction must be in [0, 1)");
  std::array<int64_t, 5> counts{};
  for (const auto& r : manifest.records)
    counts[static_cast<size_t>(r.numerosity)]++;
  int64_t total = 0, present = 0;
  for (int64_t c : counts) {
    total += c;
    if (c > 0) ++present;
  }
  DatasetManifest out = manifest;
  if (present == 0 || fraction == 0.0) return out;
  const double mean =
      static_cast<double>(total) / static_cast<double>(present);

  Rng rng(seed);
  std::vector<uint8_t> removed(manifest.records.size(), 0);
  for (int cls = 0; cls < 5; ++cls) {
    if (static_cast<double>(counts[static_cast<size_t>(cls)]) <= mean) continue;
    std::vector<size_t> idx;
    for (size_t i = 0; i < manifest.records.size(); ++i)
      if (manifest.records[i].numerosity == cls) idx.push_back(i);
    // seeded Fisher-Yates; the first floor(fraction*count) entries go
    for (size_t i = idx.size(); i > 1; --i) {
      const auto j = static_cast<size_t>(
          rng.uniform_int(0, static_cast<int64_t>(i) - 1));
      std::swap(idx[i - 1], idx[j]);
    }
    const auto k = static_cast<size_t>(
        std::floor(fraction * static_cast<double>(idx.size())));
    for (size_t i = 0; i < k; ++i) removed[idx[i]] = 1;
  }

  out.records.clear();
  for (size_t i = 0; i < manifest.records.size(); ++i)
    if (!removed[i]) out.records.push_back(manifest.records[i]);
  out.class_counts = out.recount();
  return out;
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

namespace {

ImageU8 hflip_image(const ImageU8& img) {
  ImageU8 out(img.h, img.w, img.c);
  for (int64_t y = 0; y < img.h; ++y)
    for (int64_t x = 0; x < img.w; ++x)
      for (int64_t c = 0; c < img.c; ++c)
        out.at(y, x, c) = img.at(y, img.w - 1 - x, c);
  return out;
}

}  // namespace

ImageU8 augment_image(const ImageU8& image, const AugmentConfig& config,
                      int64_t out_h, int64_t out_w, Rng& rng) {
  ImageU8 work = image;
  if (config.hflip && rng.bernoulli(0.5)) work = hflip_image(work);
  if (config.crop) {
    const double area = rng.uniform(config.crop_area_lo, 1.0);
    const double side = std::sqrt(area);
    const int64_t ch = std::max<int64_t>(
        1, std::llround(side * static_cast<double>(work.h)));
    const int64_t cw = std::max<int64_t>(
        1, std::llround(side * static_cast<double>(work.w)));
    const int64_t y0 = rng.uniform_int(0, work.h - ch);
    const int64_t x0 = rng.uniform_int(0, work.w - cw);
    work = crop(work, y0, x0, ch, cw);
  }
  if (work.h != out_h || work.w != out_w)
    work = resize_bilinear(work, out_h, out_w);
  if (config.color_shift && config.color_shift_range > 0.0) {
    for (int64_t c = 0; c < work.c; ++c) {
      const double delta =
          rng.uniform(-config.color_shift_range, config.color_shift_range) *
          255.0;
      for (int64_t y = 0; y < work.h; ++y)
        for (int64_t x = 0; x < work.w; ++x)
          work.at(y, x, c) = static_cast<uint8_t>(std::clamp(
              static_cast<double>(work.at(y, x, c)) + delta, 0.0, 255.0));
    }
  }
  return work;
}

// ---------------------------------------------------------------------------
// Epoch stats IO
// ---------------------------------------------------------------------------

namespace {

json breakdown_to_json(const LossBreakdown& l) {
  return json{{"kl", l.kl},
              {"pixel", l.pixel},
              {"perceptual_per_layer", l.perceptual_per_layer},
              {"alpha", l.alpha},
              {"beta", l.beta},
              {"pixel_enabled", l.pixel_enabled},
              {"perceptual_enabled", l.perceptual_enabled},
              {"total", l.total}};
}

LossBreakdown breakdown_from_json(const json& j) {
  LossBreakdown l;
  l.kl = j.at("kl").get<double>();
  l.pixel = j.at("pixel").get<double>();
  l.perceptual_per_layer =
      j.at("perceptual_per_layer").get<std::map<std::string, double>>();
  l.alpha = j.at("alpha").get<double>();
  l.beta = j.at("beta").get<double>();
  l.pixel_enabled = j.at("pixel_enabled").get<bool>();
  l.perceptual_enabled = j.at("perceptual_enabled").get<bool>();
  l.total = j.at("total").get<double>();
  return l;
}

}  // namespace

void save_epoch_stats(const std::string& path,
                      const std::vector<EpochStats>& stats) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    for (const auto& s : stats) {
      json j{{"epoch", s.epoch},
             {"train_loss", breakdown_to_json(s.train_loss)},
             {"val_loss", breakdown_to_json(s.val_loss)},
             {"lr", s.lr},
             {"natural_fraction", s.natural_fraction},
             {"natural_records_sampled", s.natural_records_sampled},
             {"wall_time_sec", s.wall_time_sec}};
      out << j.dump() << "\n";
    }
  }
  fs::rename(tmp, path);
}

std::vector<EpochStats> load_epoch_stats(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open stats log: " + path);
  std::vector<EpochStats> stats;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      EpochStats s;
      s.epoch = j.at("epoch").get<int>();
      s.train_loss = breakdown_from_json(j.at("train_loss"));
      s.val_loss = breakdown_from_json(j.at("val_loss"));
      s.lr = j.at("lr").get<double>();
      s.natural_fraction = j.at("natural_fraction").get<double>();
      s.natural_records_sampled =
          j.at("natural_records_sampled").get<int64_t>();
      s.wall_time_sec = j.at("wall_time_sec").get<double>();
      stats.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw FormatError(path + ":" + std::to_string(line_no) + ": " +
                        e.what());
    }
  }
  return stats;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

namespace {

struct SampleSet {
  std::vector<std::string> paths;  // absolute image paths
  std::vector<ImageU8> cache;      // decoded images (all-in-RAM policy)
};

SampleSet collect_split(const std::string& dir, const DatasetManifest& m,
                        const std::string& split, int64_t cap) {
  SampleSet s;
  for (const auto& r : m.records) {
    if (r.split != split) continue;
    s.paths.push_back((fs::path(dir) / r.image_path).string());
    if (cap > 0 && static_cast<int64_t>(s.paths.size()) >= cap) break;
  }
  s.cache.resize(s.paths.size());
  parallel_for(static_cast<int64_t>(s.paths.size()), [&](int64_t i) {
    s.cache[static_cast<size_t>(i)] = load_png(s.paths[static_cast<size_t>(i)]);
  });
  return s;
}

void accumulate_loss(LossBreakdown& acc, const LossBreakdown& b, double w) {
  acc.kl += w * b.kl;
  acc.pixel += w * b.pixel;
  for (const auto& [k, v] : b.perceptual_per_layer)
    acc.perceptual_per_layer[k] += w * v;
  acc.alpha = b.alpha;
  acc.beta = b.beta;
  acc.pixel_enabled = b.pixel_enabled;
  acc.perceptual_enabled = b.perceptual_enabled;
}

void finish_loss(LossBreakdown& acc, double total_weight) {
  if (total_weight <= 0.0) return;
  acc.kl /= total_weight;
  acc.pixel /= total_weight;
  for (auto& [_, v] : acc.perceptual_per_layer) v /= total_weight;
  acc.recompute_total();
}

struct EpochSample {
  const ImageU8* image = nullptr;
  bool natural = false;
};

}  // namespace

TrainResult run_training(const TrainConfig& config,
                         const std::string& synthetic_dir,
                         const std::string& natural_dir,
                         const ArchitectureConfig& arch,
                         const FeatureExtractorSpec& extractor_spec,
                         const std::string& out_dir) {
  config.validate();
  arch.validate();
  if (config.perceptual_enabled &&
      (extractor_spec.input_h != arch.input_h ||
       extractor_spec.input_w != arch.input_w))
    throw ConfigError("extractor input size must match the architecture");

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());

  // --- data ---------------------------------------------------------------
  const auto synth_manifest =
      load_manifest((fs::path(synthetic_dir) / "manifest.jsonl").string());
  SampleSet synth_train = collect_split(synthetic_dir, synth_manifest, "train",
                                        config.max_train_records);
  SampleSet synth_val = collect_split(synthetic_dir, synth_manifest, "val",
                                      config.max_val_records);

  SampleSet nat_train, nat_val;
  const bool has_natural = !natural_dir.empty();
  if (has_natural) {
    auto nat_manifest =
        load_manifest((fs::path(natural_dir) / "manifest.jsonl").string());
    // The natural split is the imbalanced one; trim its most frequent
    // classes once per run before any epoch sees it.
    nat_manifest = rebalance_dataset(
        nat_manifest, config.rebalance_fraction,
        derive_seed(config.master_seed, seed_stream::kRebalance, 0));
    nat_train = collect_split(natural_dir, nat_manifest, "train",
                              config.max_train_records);
    nat_val = collect_split(natural_dir, nat_manifest, "val",
                            config.max_val_records);
  }
  if (synth_train.paths.empty())
    throw DataError("no training records in " + synthetic_dir);
  if (synth_val.paths.empty() && nat_val.paths.empty())
    throw DataError("no validation records; cannot drive the LR schedule");

  // --- model --------------------------------------------------------------
  VaeModel<float> model(arch);
  model.init(config.master_seed);
  std::unique_ptr<FeatureExtractor<float>> extractor;
  if (config.perceptual_enabled) {
    extractor = std::make_unique<FeatureExtractor<float>>(extractor_spec);
    if (extractor_spec.source == FeatureExtractorSpec::Source::kExternalFile)
      load_extractor_weights(*extractor, extractor_spec.weights_path);
  }

  SgdMomentum<float> opt(model.params(), static_cast<float>(config.momentum));
  LossOptions loss_opt;
  loss_opt.alpha = config.alpha;
  loss_opt.beta = config.beta;
  loss_opt.perceptual_enabled = config.perceptual_enabled;
  loss_opt.pixel_enabled = config.pixel_enabled;

  TrainResult result;
  result.best_checkpoint_path = (fs::path(out_dir) / "best.nvtf").string();
  result.final_checkpoint_path = (fs::path(out_dir) / "final.nvtf").string();
  result.stats_path = (fs::path(out_dir) / "train_stats.jsonl").string();
  result.best_val_loss = std::numeric_limits<double>::infinity();

  // a last-good checkpoint exists from the start, so a divergence abort
  // always leaves something restorable on disk
  save_checkpoint(result.best_checkpoint_path,
                  snapshot_model(model, json{{"epoch", -1},
                                             {"val_loss", nullptr},
                                             {"master_seed", config.master_seed}}));

  const int64_t epoch_size = static_cast<int64_t>(synth_train.paths.size());
  const int64_t B = config.batch_size;
  const int64_t latent = arch.latent_dim;
  double lr = config.lr_initial;
  std::vector<double> val_history;

  // fixed validation list: synthetic val then natural val
  std::vector<const ImageU8*> val_images;
  for (const auto& img : synth_val.cache) val_images.push_back(&img);
  for (const auto& img : nat_val.cache) val_images.push_back(&img);

  AugmentConfig eval_aug;  // resize-only path for validation
  eval_aug.hflip = false;
  eval_aug.crop = false;
  eval_aug.color_shift = false;

  for (int epoch = 0; epoch < config.total_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();

    const double frac = has_natural ? mix_schedule(epoch, config) : 0.0;
    int64_t n_nat = std::min<int64_t>(
        std::llround(frac * static_cast<double>(epoch_size)),
        static_cast<int64_t>(nat_train.paths.size()));
    if (!has_natural) n_nat = 0;
    const int64_t n_syn = epoch_size - n_nat;

    Rng shuffle_rng(derive_seed(config.master_seed, seed_stream::kEpochShuffle,
                                static_cast<uint64_t>(epoch)));
    auto shuffled = [&](int64_t n) {
      std::vector<int64_t> v(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) v[static_cast<size_t>(i)] = i;
      for (int64_t i = n - 1; i > 0; --i) {
        const int64_t j = shuffle_rng.uniform_int(0, i);
        std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
      }
      return v;
    };
    const auto syn_order = shuffled(static_cast<int64_t>(synth_train.paths.size()));
    const auto nat_order = shuffled(static_cast<int64_t>(nat_train.paths.size()));

    std::vector<EpochSample> samples;
    samples.reserve(static_cast<size_t>(epoch_size));
    for (int64_t i = 0; i < n_syn; ++i)
      samples.push_back(
          {&synth_train.cache[static_cast<size_t>(syn_order[static_cast<size_t>(i)])],
           false});
    for (int64_t i = 0; i < n_nat; ++i)
      samples.push_back(
          {&nat_train.cache[static_cast<size_t>(nat_order[static_cast<size_t>(i)])],
           true});
    for (int64_t i = static_cast<int64_t>(samples.size()) - 1; i > 0; --i) {
      const int64_t j = shuffle_rng.uniform_int(0, i);
      std::swap(samples[static_cast<size_t>(i)], samples[static_cast<size_t>(j)]);
    }

    const uint64_t aug_seed = derive_seed(config.master_seed,
                                          seed_stream::kAugment,
                                          static_cast<uint64_t>(epoch));
    const uint64_t noise_seed = derive_seed(config.master_seed,
                                            seed_stream::kLatentNoise,
                                            static_cast<uint64_t>(epoch));

    LossBreakdown train_acc;
    double train_weight = 0.0;

    const int64_t n_batches =
        (static_cast<int64_t>(samples.size()) + B - 1) / B;
    for (int64_t b = 0; b < n_batches; ++b) {
      const int64_t lo = b * B;
      const int64_t hi =
          std::min<int64_t>(lo + B, static_cast<int64_t>(samples.size()));
      const int64_t bn = hi - lo;

      Tensor<float> x({bn, arch.input_c, arch.input_h, arch.input_w});
      Tensor<float> eps({bn, latent});
      parallel_for(bn, [&](int64_t i) {
        const auto& s = samples[static_cast<size_t>(lo + i)];
        Rng arng(derive_seed(aug_seed, 0, static_cast<uint64_t>(lo + i)));
        const ImageU8 img = augment_image(*s.image, config.augmentation,
                                          arch.input_h, arch.input_w, arng);
        image_into_batch(img, x, i);
        Rng nrng(derive_seed(noise_seed, 0, static_cast<uint64_t>(lo + i)));
        float* e = eps.data() + i * latent;
        for (int64_t k = 0; k < latent; ++k)
          e[k] = static_cast<float>(nrng.normal());
      });

      opt.zero_grads();
      VaeStepOutput<float> step;
      try {
        step = vae_training_step(model, extractor.get(), x, eps, loss_opt,
                                 /*train=*/true, /*with_grads=*/true);
      } catch (const DomainError& e) {
        // e.g. sigma underflowing to zero after a parameter blow-up: the
        // loss is no longer finite-valued
        throw DivergenceError("loss undefined at epoch " +
                              std::to_string(epoch) + ", batch " +
                              std::to_string(b) + " (" + e.what() +
                              "); last good checkpoint: " +
                              result.best_checkpoint_path);
      }
      if (!std::isfinite(step.loss.total))
        throw DivergenceError(
            "non-finite training loss at epoch " + std::to_string(epoch) +
            ", batch " + std::to_string(b) +
            "; last good checkpoint: " + result.best_checkpoint_path);
      opt.step(static_cast<float>(lr));
      accumulate_loss(train_acc, step.loss, static_cast<double>(bn));
      train_weight += static_cast<double>(bn);
    }
    finish_loss(train_acc, train_weight);

    // --- validation (eval mode, eps = 0, no augmentation) ------------------
    LossBreakdown val_acc;
    double val_weight = 0.0;
    Rng dummy_rng(0);
    for (int64_t lo = 0; lo < static_cast<int64_t>(val_images.size());
         lo += B) {
      const int64_t hi = std::min<int64_t>(
          lo + B, static_cast<int64_t>(val_images.size()));
      const int64_t bn = hi - lo;
      Tensor<float> x({bn, arch.input_c, arch.input_h, arch.input_w});
      parallel_for(bn, [&](int64_t i) {
        Rng r(0);  // unused: every stochastic toggle is off
        const ImageU8 img =
            augment_image(*val_images[static_cast<size_t>(lo + i)], eval_aug,
                          arch.input_h, arch.input_w, r);
        image_into_batch(img, x, i);
      });
      Tensor<float> eps({bn, latent});
      eps.fill(0.0f);
      VaeStepOutput<float> step;
      try {
        step = vae_training_step(model, extractor.get(), x, eps, loss_opt,
                                 /*train=*/false, /*with_grads=*/false);
      } catch (const DomainError& e) {
        throw DivergenceError("validation loss undefined at epoch " +
                              std::to_string(epoch) + " (" + e.what() + ")");
      }
      if (!std::isfinite(step.loss.total))
        throw DivergenceError("non-finite validation loss at epoch " +
                              std::to_string(epoch));
      accumulate_loss(val_acc, step.loss, static_cast<double>(bn));
      val_weight += static_cast<double>(bn);
    }
    finish_loss(val_acc, val_weight);

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = train_acc;
    stats.val_loss = val_acc;
    stats.lr = lr;
    stats.natural_fraction = frac;
    stats.natural_records_sampled = n_nat;
    stats.wall_time_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    result.stats.push_back(stats);
    save_epoch_stats(result.stats_path, result.stats);

    if (val_acc.total < result.best_val_loss) {
      result.best_val_loss = val_acc.total;
      result.best_epoch = epoch;
      save_checkpoint(result.best_checkpoint_path,
                      snapshot_model(model,
                                     json{{"epoch", epoch},
                                          {"val_loss", val_acc.total},
                                          {"lr", lr},
                                          {"master_seed", config.master_seed}}));
    }

    val_history.push_back(val_acc.total);
    lr = lr_schedule_step(val_history, lr, config);
  }

  save_checkpoint(
      result.final_checkpoint_path,
      snapshot_model(model, json{{"epoch", config.total_epochs - 1},
                                 {"val_loss", val_history.back()},
                                 {"lr", lr},
                                 {"master_seed", config.master_seed}}));
  return result;
}

}  // namespace numvae
