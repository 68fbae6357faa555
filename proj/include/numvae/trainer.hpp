#pragma once

#include <string>
#include <vector>

#include "numvae/extractor.hpp"
#include "numvae/loss.hpp"
#include "numvae/scenegen.hpp"
#include "numvae/vae.hpp"

namespace numvae {

// Optimization protocol: synthetic warm-up with a gradual natural-data
// ramp, plateau-driven LR decay, seeded class rebalancing, augmentation,
// and best/final checkpointing. Every stochastic choice derives from
// master_seed, so a run is bit-reproducible for a fixed thread setting.

struct AugmentConfig {
  bool hflip = true;
  bool crop = true;
  double crop_area_lo = 0.90;  // crop windows cover 90..100% of the area
  bool color_shift = true;
  double color_shift_range = 0.10;  // additive, in [0,1] pixel units
};

struct TrainConfig {
  double alpha = 1.0;
  double beta = 0.03;
  double lr_initial = 0.0015;
  double lr_decay_factor = 5.0;
  int plateau_epochs = 4;
  double plateau_min_rel_improvement = 0.001;
  int total_epochs = 30;
  int warmup_epochs = 10;       // natural data is excluded before this
  int mix_ramp_end_epoch = 15;  // ramp from warmup to here, then hold
  double mix_target_fraction = 0.5;
  int batch_size = 32;
  uint64_t master_seed = 1;
  double rebalance_fraction = 0.10;
  double momentum = 0.9;
  AugmentConfig augmentation;
  bool perceptual_enabled = true;
  bool pixel_enabled = false;
  int64_t max_train_records = 0;  // 0 = use the full train split
  int64_t max_val_records = 0;

  // Mirrors the architecture presets: "paper" uses the full 140-epoch
  // recipe, "desk" a 30-epoch variant, "tiny" a smoke-test loop.
  static TrainConfig make(const std::string& preset);
  void validate() const;  // throws ConfigError
};

struct EpochStats {
  int epoch = 0;
  LossBreakdown train_loss;
  LossBreakdown val_loss;
  double lr = 0.0;
  double natural_fraction = 0.0;
  int64_t natural_records_sampled = 0;
  double wall_time_sec = 0.0;
};

// Pure replay of the plateau rule over the validation-loss history
// (last entry = current epoch). Returns current_lr unchanged or divided
// by lr_decay_factor. The running best only counts as "improved" when it
// drops by at least plateau_min_rel_improvement relative; the
// non-improvement streak includes the first epoch, and a decay resets
// the streak so decay events are at least plateau_epochs apart.
double lr_schedule_step(const std::vector<double>& val_history,
                        double current_lr, const TrainConfig& config);

// Natural-data fraction for an epoch: 0 before warmup_epochs, linear up
// to mix_target_fraction at mix_ramp_end_epoch, constant after.
double mix_schedule(int epoch, const TrainConfig& config);

// Removes floor(fraction * count) records, seeded and uniformly at
// random, from every class whose count exceeds the mean count over
// non-empty classes. Survivor order is preserved.
DatasetManifest rebalance_dataset(const DatasetManifest& manifest,
                                  double fraction, uint64_t seed);

// Flip / crop-and-resize / per-channel additive shift, in that fixed
// draw order; always returns out_h x out_w (the network input size).
ImageU8 augment_image(const ImageU8& image, const AugmentConfig& config,
                      int64_t out_h, int64_t out_w, Rng& rng);

struct TrainResult {
  std::string best_checkpoint_path;
  std::string final_checkpoint_path;
  std::string stats_path;
  std::vector<EpochStats> stats;
  int best_epoch = -1;
  double best_val_loss = 0.0;
};

// Trains a fresh model on the train split of the synthetic dataset
// (plus, past warm-up, the natural dataset if given), validating on the
// union of both val splits. Writes best.nvtf, final.nvtf and
// train_stats.jsonl under out_dir. Throws DivergenceError when a batch
// loss goes non-finite; the last good checkpoint stays on disk.
TrainResult run_training(const TrainConfig& config,
                         const std::string& synthetic_dir,
                         const std::string& natural_dir,
                         const ArchitectureConfig& arch,
                         const FeatureExtractorSpec& extractor_spec,
                         const std::string& out_dir);

// JSONL round-trip for the per-epoch log.
void save_epoch_stats(const std::string& path,
                      const std::vector<EpochStats>& stats);
std::vector<EpochStats> load_epoch_stats(const std::string& path);

}  // namespace numvae
