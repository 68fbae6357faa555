#include "numvae/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace numvae {

namespace {

// Little-endian scalar IO. The format is defined as little-endian; this
// implementation targets little-endian hosts (checked at startup of the
// readers below via a compile-time assumption on x86/ARM builds).
template <typename T>
void put(std::string& out, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  out.append(b, sizeof(T));
}

class Cursor {
 public:
  Cursor(const uint8_t* data, size_t size, const std::string& path)
      : data_(data), size_(size), path_(path) {}

  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > size_)
      throw FormatError("truncated checkpoint file: " + path_);
    T v;
    std::memcpy(&v, data_ + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string get_bytes(size_t n) {
    if (pos_ + n > size_ || n > size_)
      throw FormatError("truncated checkpoint file: " + path_);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }

  void get_floats(float* dst, size_t n) {
    if (pos_ + n * sizeof(float) > size_)
      throw FormatError("truncated checkpoint file: " + path_);
    std::memcpy(dst, data_ + pos_, n * sizeof(float));
    pos_ += n * sizeof(float);
  }

  size_t pos() const { return pos_; }

 private:
  const uint8_t* data_;
  size_t size_;
  size_t pos_ = 0;
  const std::string& path_;
};

}  // namespace

uint64_t fnv1a64(const uint8_t* data, size_t n, uint64_t seed) {
  uint64_t h = seed;
  for (size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 1099511628211ull;
  }
  return h;
}

void save_checkpoint(const std::string& path, const CheckpointFile& file) {
  std::string buf;
  buf.append(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::string meta = file.meta.dump();
  put<uint32_t>(buf, static_cast<uint32_t>(meta.size()));
  buf.append(meta);
  put<uint32_t>(buf, static_cast<uint32_t>(file.tensors.size()));
  for (const auto& t : file.tensors) {
    put<uint32_t>(buf, static_cast<uint32_t>(t.name.size()));
    buf.append(t.name);
    put<uint32_t>(buf, static_cast<uint32_t>(t.shape.size()));
    for (int64_t d : t.shape) put<int64_t>(buf, d);
    if (static_cast<int64_t>(t.data.size()) != t.numel())
      throw FormatError("tensor \"" + t.name + "\" payload size " +
                        std::to_string(t.data.size()) +
                        " does not match its shape");
    const size_t bytes = t.data.size() * sizeof(float);
    const size_t off = buf.size();
    buf.resize(off + bytes);
    std::memcpy(buf.data() + off, t.data.data(), bytes);
  }
  put<uint64_t>(buf,
                fnv1a64(reinterpret_cast<const uint8_t*>(buf.data()), buf.size()));

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + tmp);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("short write: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("rename " + tmp + " -> " + path + ": " + ec.message());
}

CheckpointFile load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  const auto size = static_cast<size_t>(in.tellg());
  std::vector<uint8_t> buf(size);
  in.seekg(0);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(size));
  if (!in) throw IoError("read failed: " + path);

  if (size < sizeof(kCheckpointMagic) + sizeof(uint64_t))
    throw FormatError("file too small to be a checkpoint: " + path);
  if (std::memcmp(buf.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
    throw FormatError("bad magic (not an NVTF0001 file): " + path);

  const size_t body = size - sizeof(uint64_t);
  uint64_t stored;
  std::memcpy(&stored, buf.data() + body, sizeof(uint64_t));
  if (fnv1a64(buf.data(), body) != stored)
    throw FormatError("checksum mismatch (corrupt checkpoint): " + path);

  Cursor cur(buf.data(), body, path);
  cur.get_bytes(sizeof(kCheckpointMagic));
  CheckpointFile file;
  const auto meta_len = cur.get<uint32_t>();
  const std::string meta = cur.get_bytes(meta_len);
  file.meta = nlohmann::json::parse(meta, nullptr, false);
  if (file.meta.is_discarded())
    throw FormatError("checkpoint metadata is not valid JSON: " + path);

  const auto count = cur.get<uint32_t>();
  file.tensors.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = cur.get_bytes(cur.get<uint32_t>());
    const auto ndim = cur.get<uint32_t>();
    if (ndim > 8)
      throw FormatError("tensor \"" + t.name + "\" has implausible rank " +
                        std::to_string(ndim));
    int64_t numel = 1;
    for (uint32_t d = 0; d < ndim; ++d) {
      const auto dim = cur.get<int64_t>();
      if (dim <= 0 || numel > (1ll << 33) / std::max<int64_t>(dim, 1))
        throw FormatError("tensor \"" + t.name + "\" has invalid dimensions");
      t.shape.push_back(dim);
      numel *= dim;
    }
    t.data.resize(static_cast<size_t>(numel));
    cur.get_floats(t.data.data(), t.data.size());
    file.tensors.push_back(std::move(t));
  }
  if (cur.pos() != body)
    throw FormatError("trailing bytes after tensor table: " + path);
  return file;
}

nlohmann::json architecture_to_json(const ArchitectureConfig& cfg) {
  nlohmann::json j;
  j["preset"] = cfg.preset;
  j["input_h"] = cfg.input_h;
  j["input_w"] = cfg.input_w;
  j["input_c"] = cfg.input_c;
  j["latent_dim"] = cfg.latent_dim;
  j["leaky_slope"] = cfg.leaky_slope;
  j["use_batchnorm"] = cfg.use_batchnorm;
  auto layers = [](const std::vector<ConvLayerSpec>& ls) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& l : ls)
      a.push_back({{"filters", l.filters}, {"kernel", l.kernel}, {"stride", l.stride}});
    return a;
  };
  j["encoder"] = layers(cfg.encoder_layers);
  j["decoder"] = layers(cfg.decoder_layers);
  return j;
}

ArchitectureConfig architecture_from_json(const nlohmann::json& j) {
  ArchitectureConfig cfg;
  try {
    cfg.preset = j.at("preset").get<std::string>();
    cfg.input_h = j.at("input_h").get<int64_t>();
    cfg.input_w = j.at("input_w").get<int64_t>();
    cfg.input_c = j.at("input_c").get<int64_t>();
    cfg.latent_dim = j.at("latent_dim").get<int64_t>();
    cfg.leaky_slope = j.at("leaky_slope").get<double>();
    cfg.use_batchnorm = j.at("use_batchnorm").get<bool>();
    auto layers = [](const nlohmann::json& a) {
      std::vector<ConvLayerSpec> ls;
      for (const auto& l : a)
        ls.push_back({l.at("filters").get<int64_t>(), l.at("kernel").get<int>(),
                      l.at("stride").get<int>()});
      return ls;
    };
    cfg.encoder_layers = layers(j.at("encoder"));
    cfg.decoder_layers = layers(j.at("decoder"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed architecture record: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

}  // namespace numvae
