#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "numvae/image.hpp"
#include "numvae/util.hpp"

namespace numvae {

// Labeled-scene synthesis: procedural object assets are composited onto
// textured backgrounds with exact numerosity (N in 0..4) and exact
// cumulative foreground area (A, in pixels) ground truth.

// A foreground object: RGB pixels plus a binary cutout mask of the same
// size.
struct ObjectAsset {
  std::string asset_id;
  ImageU8 pixels;
  std::vector<uint8_t> mask;  // h*w entries of 0/1
  int class_id = 0;

  int64_t mask_area() const {
    int64_t n = 0;
    for (uint8_t m : mask) n += m;
    return n;
  }
};

// Throws AssetError if the mask is empty, sizes disagree, or class_id is
// out of range.
void validate_asset(const ObjectAsset& asset, int num_classes);

// The 15-class procedural bank. Assets are rasterized analytically at
// `canonical` resolution; the same seed-free construction always yields
// identical assets.
std::vector<ObjectAsset> builtin_asset_bank(int64_t canonical = 160);
int builtin_num_classes();

// Loads `<name>.png` + `<name>_mask.png` pairs from a directory (sorted
// by name; class ids follow sort order).
std::vector<ObjectAsset> load_asset_bank(const std::string& dir);

// Loads every .png under dir, sorted by filename. The sort order matters:
// background selection indexes into this list.
std::vector<ImageU8> load_background_dir(const std::string& dir);

struct TransformSet {
  bool hflip = true;           // applied with p = 0.5
  double rotation_deg = 20.0;  // uniform in [-r, +r]
  double color_shift = 0.10;   // per-channel gain in [1-c, 1+c]
};

// One scene to synthesize. `seed` fully determines the output.
struct SceneSpec {
  int64_t canvas_h = 64, canvas_w = 64;
  int numerosity = 0;          // N in {0..4}
  double base_scale = 0.03;    // fraction of canvas area per object
  double scale_jitter = 0.15;  // per-object relative area variation bound
  bool allow_overlap = false;
  bool single_asset = false;   // probe scenes: N copies of the same asset
  int forced_class = -1;       // pin the asset class; -1 draws it
  TransformSet transforms;
  uint64_t seed = 0;

  void validate() const;  // throws ConfigError / PackingFailure preconditions
};

struct SceneRecord {
  std::string image_path;
  int numerosity = 0;
  int64_t cumulative_area = 0;  // exact foreground pixels; -1 if unavailable
  bool area_available = true;
  std::vector<int> class_ids;   // length N; -1 entries for external data
  std::vector<std::array<int64_t, 4>> object_boxes;  // x, y, w, h
  std::string split = "train";
  uint64_t seed = 0;
};

struct SceneRender {
  ImageU8 image;
  std::vector<uint8_t> occupancy;  // composite foreground mask, h*w
  SceneRecord record;              // image_path/split left for the caller
};

// Composites spec.numerosity objects onto a procedural background.
// Throws PackingFailure when the rejection sampler exhausts its
// 1000-attempt budget or the packability bound base_scale*N <= 0.9 is
// violated; AssetError on malformed bank entries.
SceneRender synthesize_scene(const SceneSpec& spec,
                             const std::vector<ObjectAsset>& bank,
                             const std::vector<ImageU8>* backgrounds = nullptr);

// Dataset-level generator configuration; persisted verbatim in the
// manifest header so `verify` can re-render records.
struct GeneratorConfig {
  std::string preset = "desk";  // desk | warmup | probe
  int64_t canvas_h = 64, canvas_w = 64;
  double scale_lo = 0.012;  // per-scene base_scale is log-uniform in
  double scale_hi = 0.08;   // [scale_lo, scale_hi]
  double scale_jitter = 0.15;
  bool single_asset = false;
  bool allow_overlap = false;
  TransformSet transforms;
  std::string bank = "builtin15";
  std::string backgrounds = "builtin";
  int num_classes = 15;
  uint64_t master_seed = 1;

  static GeneratorConfig make(const std::string& preset);
};

struct DatasetManifest {
  int format_version = 1;
  GeneratorConfig generator;
  std::array<int64_t, 5> class_counts{};  // histogram over numerosity
  std::vector<SceneRecord> records;

  std::array<int64_t, 5> recount() const {
    std::array<int64_t, 5> h{};
    for (const auto& r : records) h[static_cast<size_t>(r.numerosity)]++;
    return h;
  }
};

// Generates `count` scenes under out_dir (images/ subdirectory +
// manifest.jsonl). Splits are assigned deterministically per record from
// the master seed.
DatasetManifest build_dataset(const GeneratorConfig& config, int64_t count,
                              const std::array<double, 3>& split_fractions,
                              const std::vector<ObjectAsset>& bank,
                              const std::string& out_dir,
                              const std::vector<ImageU8>* backgrounds = nullptr);

// Re-derives the exact SceneSpec used for record index `i` of a build;
// verify and the trainer's augmentation both rely on this being stable.
SceneSpec scene_spec_for_record(const GeneratorConfig& config,
                                uint64_t record_seed);

// External SOS-style data: images plus a CSV of "filename,label" rows
// with labels in {0,1,2,3,4,4+}. Images are re-encoded at the configured
// canvas size under out_dir; cumulative area is marked unavailable.
DatasetManifest ingest_external_dataset(const std::string& root_dir,
                                        const std::string& label_file,
                                        const std::string& out_dir,
                                        int64_t canvas_h, int64_t canvas_w,
                                        const std::array<double, 3>& split_fractions,
                                        uint64_t master_seed);

struct Violation {
  std::string type;    // HistogramMismatch | MissingImage | CanvasMismatch |
                       // AreaMismatch | OverlapViolation | RenderMismatch |
                       // LengthMismatch
  std::string detail;
};

struct VerifyReport {
  std::vector<Violation> violations;
  int64_t records_checked = 0;
  int64_t records_rerendered = 0;
  bool ok() const { return violations.empty(); }
};

// Invariant audit of a manifest on disk. `rerender_limit` bounds how many
// synthetic records are re-synthesized for the pixel/area/disjointness
// comparison (0 disables, -1 means all).
VerifyReport verify_manifest(const std::string& manifest_path,
                             int64_t rerender_limit = -1);

// manifest.jsonl IO (header line + one record per line).
void save_manifest(const std::string& path, const DatasetManifest& manifest);
DatasetManifest load_manifest(const std::string& path);

}  // namespace numvae
