#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "numvae/extractor.hpp"
#include "numvae/vae.hpp"

namespace numvae {

// Binary container for named float32 tensors plus a JSON metadata
// blob. Layout (all integers little-endian):
//
//   bytes 0..7   magic "NVTF0001"
//   u32          metadata length, followed by that many UTF-8 bytes (JSON)
//   u32          tensor count
//   per tensor:  u32 name length, name bytes,
//                u32 ndim, i64 dims[ndim],
//                f32 payload (product of dims elements)
//   u64          FNV-1a hash of every preceding byte
//
// Files are written to "<path>.tmp" and renamed into place, so readers
// never observe a partially written checkpoint.

struct NamedTensor {
  std::string name;
  std::vector<int64_t> shape;
  std::vector<float> data;

  int64_t numel() const {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
  }
};

struct CheckpointFile {
  nlohmann::json meta;
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
};

inline constexpr char kCheckpointMagic[8] = {'N', 'V', 'T', 'F',
                                             '0', '0', '0', '1'};

uint64_t fnv1a64(const uint8_t* data, size_t n, uint64_t seed = 14695981039346656037ull);

void save_checkpoint(const std::string& path, const CheckpointFile& file);

// Throws FormatError (with the reason and, where applicable, the tensor
// name) on bad magic, truncation, malformed sizes, or hash mismatch.
CheckpointFile load_checkpoint(const std::string& path);

nlohmann::json architecture_to_json(const ArchitectureConfig& cfg);
ArchitectureConfig architecture_from_json(const nlohmann::json& j);

// ---- model <-> container glue -------------------------------------------

template <typename T>
CheckpointFile snapshot_model(VaeModel<T>& model, nlohmann::json extra_meta) {
  CheckpointFile f;
  f.meta = std::move(extra_meta);
  f.meta["format_version"] = 1;
  f.meta["kind"] = "vae_model";
  f.meta["architecture"] = architecture_to_json(model.config());
  for (const auto& p : model.params()) {
    NamedTensor t;
    t.name = p.name;
    t.shape = p.value->shape();
    t.data.resize(static_cast<size_t>(p.value->numel()));
    for (int64_t i = 0; i < p.value->numel(); ++i)
      t.data[static_cast<size_t>(i)] = static_cast<float>((*p.value)[i]);
    f.tensors.push_back(std::move(t));
  }
  return f;
}

// Restores every parameter and buffer by name. The first missing,
// extra, or shape-mismatched tensor aborts the restore with a
// FormatError that names it.
template <typename T>
void restore_model(VaeModel<T>& model, const CheckpointFile& file) {
  auto params = model.params();
  for (const auto& p : params) {
    const NamedTensor* t = file.find(p.name);
    if (!t)
      throw FormatError("checkpoint is missing tensor \"" + p.name + "\"");
    if (t->shape != p.value->shape())
      throw FormatError("checkpoint tensor \"" + p.name + "\" has shape " +
                        Tensor<float>::shape_str(t->shape) + ", expected " +
                        p.value->shape_str());
    for (int64_t i = 0; i < p.value->numel(); ++i)
      (*p.value)[i] = static_cast<T>(t->data[static_cast<size_t>(i)]);
  }
  if (file.tensors.size() != params.size()) {
    for (const auto& t : file.tensors) {
      bool known = false;
      for (const auto& p : params)
        if (p.name == t.name) { known = true; break; }
      if (!known)
        throw FormatError("checkpoint has unexpected tensor \"" + t.name + "\"");
    }
  }
}

template <typename T>
VaeModel<T> load_model(const std::string& path, CheckpointFile* out_file = nullptr) {
  CheckpointFile f = load_checkpoint(path);
  if (!f.meta.contains("architecture"))
    throw FormatError("checkpoint lacks an architecture record: " + path);
  VaeModel<T> model(architecture_from_json(f.meta.at("architecture")));
  restore_model(model, f);
  if (out_file) *out_file = std::move(f);
  return model;
}

// External perceptual-extractor weights use the same container with
// kind == "feature_extractor" and tensors named conv<i>.weight/.bias.
template <typename T>
void load_extractor_weights(FeatureExtractor<T>& extractor,
                            const std::string& path) {
  CheckpointFile f = load_checkpoint(path);
  for (const auto& p : extractor.params()) {
    const NamedTensor* t = f.find(p.name);
    if (!t)
      throw FormatError("extractor weights missing tensor \"" + p.name + "\"");
    if (t->shape != p.value->shape())
      throw FormatError("extractor tensor \"" + p.name + "\" has shape " +
                        Tensor<float>::shape_str(t->shape) + ", expected " +
                        p.value->shape_str());
    for (int64_t i = 0; i < p.value->numel(); ++i)
      (*p.value)[i] = static_cast<T>(t->data[static_cast<size_t>(i)]);
  }
}

}  // namespace numvae
