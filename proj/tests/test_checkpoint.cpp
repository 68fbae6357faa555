#include <doctest.h>

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "numvae/checkpoint.hpp"

using namespace numvae;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("numvae_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

CheckpointFile sample_file() {
  CheckpointFile f;
  f.meta = {{"format_version", 1}, {"kind", "unit_test"}, {"epoch", 7}};
  NamedTensor a;
  a.name = "alpha";
  a.shape = {2, 3};
  a.data = {1.0f, -2.5f, 3.25f, 0.0f, 1e-7f, 42.0f};
  NamedTensor b;
  b.name = "beta.bias";
  b.shape = {4};
  b.data = {0.5f, 0.25f, -0.125f, 9.0f};
  f.tensors = {a, b};
  return f;
}

}  // namespace

TEST_CASE("checkpoint round-trips exactly") {
  TempDir tmp;
  const auto path = tmp.file("model.nvtf");
  save_checkpoint(path, sample_file());
  const auto got = load_checkpoint(path);
  CHECK(got.meta.at("kind") == "unit_test");
  CHECK(got.meta.at("epoch") == 7);
  REQUIRE(got.tensors.size() == 2);
  CHECK(got.tensors[0].name == "alpha");
  CHECK(got.tensors[0].shape == std::vector<int64_t>{2, 3});
  CHECK(got.tensors[0].data == sample_file().tensors[0].data);  // bitwise
  CHECK(got.tensors[1].name == "beta.bias");
  CHECK(got.find("beta.bias") != nullptr);
  CHECK(got.find("gamma") == nullptr);
}

TEST_CASE("no temporary file is left behind") {
  TempDir tmp;
  const auto path = tmp.file("model.nvtf");
  save_checkpoint(path, sample_file());
  CHECK(fs::exists(path));
  CHECK(!fs::exists(path + ".tmp"));
}

TEST_CASE("corruption is detected") {
  TempDir tmp;
  const auto path = tmp.file("model.nvtf");
  save_checkpoint(path, sample_file());

  SUBCASE("flipped payload byte") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(60);
    char c;
    f.seekg(60);
    f.get(c);
    f.seekp(60);
    f.put(static_cast<char>(c ^ 0x40));
    f.close();
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  }
  SUBCASE("truncated file") {
    const auto size = fs::file_size(path);
    fs::resize_file(path, size - 9);
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  }
  SUBCASE("bad magic") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("XXXX", 4);
    f.close();
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_checkpoint(tmp.file("nope.nvtf")), IoError);
  }
}

TEST_CASE("model snapshot restores to identical behaviour") {
  TempDir tmp;
  VaeModel<float> model(ArchitectureConfig::make("tiny"));
  model.init(31337);
  Tensor<float> x({2, 3, 8, 8});
  Rng rng(4);
  for (int64_t i = 0; i < x.numel(); ++i)
    x[i] = static_cast<float>(rng.uniform());
  const auto ref = model.encode(x, false);

  const auto path = tmp.file("vae.nvtf");
  save_checkpoint(path, snapshot_model(model, {{"epoch", 3}}));

  CheckpointFile meta_out;
  auto restored = load_model<float>(path, &meta_out);
  CHECK(meta_out.meta.at("epoch") == 3);
  CHECK(meta_out.meta.at("kind") == "vae_model");
  const auto got = restored.encode(x, false);
  REQUIRE(got.mu.same_shape(ref.mu));
  for (int64_t i = 0; i < got.mu.numel(); ++i) {
    CHECK(got.mu[i] == ref.mu[i]);
    CHECK(got.sigma[i] == ref.sigma[i]);
  }
}

TEST_CASE("restore failures name the offending tensor") {
  TempDir tmp;
  VaeModel<float> model(ArchitectureConfig::make("tiny"));
  model.init(1);

  SUBCASE("missing tensor") {
    auto snap = snapshot_model(model, {});
    snap.tensors.erase(snap.tensors.begin());
    const std::string victim = snapshot_model(model, {}).tensors[0].name;
    const auto path = tmp.file("bad.nvtf");
    save_checkpoint(path, snap);
    VaeModel<float> fresh(ArchitectureConfig::make("tiny"));
    try {
      auto f = load_checkpoint(path);
      restore_model(fresh, f);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find(victim) != std::string::npos);
    }
  }
  SUBCASE("shape mismatch") {
    auto snap = snapshot_model(model, {});
    snap.tensors[0].shape = {1, static_cast<int64_t>(snap.tensors[0].data.size())};
    const auto path = tmp.file("bad2.nvtf");
    save_checkpoint(path, snap);
    VaeModel<float> fresh(ArchitectureConfig::make("tiny"));
    try {
      auto f = load_checkpoint(path);
      restore_model(fresh, f);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find(snap.tensors[0].name) != std::string::npos);
    }
  }
  SUBCASE("unexpected extra tensor") {
    auto snap = snapshot_model(model, {});
    NamedTensor extra;
    extra.name = "mystery";
    extra.shape = {2};
    extra.data = {1.f, 2.f};
    snap.tensors.push_back(extra);
    const auto path = tmp.file("bad3.nvtf");
    save_checkpoint(path, snap);
    VaeModel<float> fresh(ArchitectureConfig::make("tiny"));
    try {
      auto f = load_checkpoint(path);
      restore_model(fresh, f);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("mystery") != std::string::npos);
    }
  }
}

TEST_CASE("architecture json round-trips") {
  const auto cfg = ArchitectureConfig::make("desk");
  const auto j = architecture_to_json(cfg);
  const auto back = architecture_from_json(j);
  CHECK(back.preset == cfg.preset);
  CHECK(back.latent_dim == cfg.latent_dim);
  CHECK(back.encoder_layers.size() == cfg.encoder_layers.size());
  for (size_t i = 0; i < cfg.encoder_layers.size(); ++i) {
    CHECK(back.encoder_layers[i].filters == cfg.encoder_layers[i].filters);
    CHECK(back.encoder_layers[i].kernel == cfg.encoder_layers[i].kernel);
    CHECK(back.encoder_layers[i].stride == cfg.encoder_layers[i].stride);
  }
  nlohmann::json broken = j;
  broken.erase("latent_dim");
  CHECK_THROWS_AS(architecture_from_json(broken), FormatError);
}

TEST_CASE("fnv1a is the reference function") {
  // Published FNV-1a 64-bit test vectors.
  const uint8_t empty[1] = {0};
  CHECK(fnv1a64(empty, 0) == 0xcbf29ce484222325ull);
  const char* a = "a";
  CHECK(fnv1a64(reinterpret_cast<const uint8_t*>(a), 1) == 0xaf63dc4c8601ec8cull);
  const char* foobar = "foobar";
  CHECK(fnv1a64(reinterpret_cast<const uint8_t*>(foobar), 6) ==
        0x85944171f73967e8ull);
}
