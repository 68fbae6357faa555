#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "numvae/errors.hpp"
#include "numvae/scenegen.hpp"

namespace numvae {

namespace {

using nlohmann::json;

json generator_to_json(const GeneratorConfig& g) {
  return json{{"preset", g.preset},
              {"canvas_h", g.canvas_h},
              {"canvas_w", g.canvas_w},
              {"scale_lo", g.scale_lo},
              {"scale_hi", g.scale_hi},
              {"scale_jitter", g.scale_jitter},
              {"single_asset", g.single_asset},
              {"allow_overlap", g.allow_overlap},
              {"transforms",
               {{"hflip", g.transforms.hflip},
                {"rotation_deg", g.transforms.rotation_deg},
                {"color_shift", g.transforms.color_shift}}},
              {"bank", g.bank},
              {"backgrounds", g.backgrounds},
              {"num_classes", g.num_classes},
              {"master_seed", g.master_seed}};
}

GeneratorConfig generator_from_json(const json& j) {
  GeneratorConfig g;
  g.preset = j.at("preset").get<std::string>();
  g.canvas_h = j.at("canvas_h").get<int64_t>();
  g.canvas_w = j.at("canvas_w").get<int64_t>();
  g.scale_lo = j.at("scale_lo").get<double>();
  g.scale_hi = j.at("scale_hi").get<double>();
  g.scale_jitter = j.at("scale_jitter").get<double>();
  g.single_asset = j.at("single_asset").get<bool>();
  g.allow_overlap = j.at("allow_overlap").get<bool>();
  const auto& t = j.at("transforms");
  g.transforms.hflip = t.at("hflip").get<bool>();
  g.transforms.rotation_deg = t.at("rotation_deg").get<double>();
  g.transforms.color_shift = t.at("color_shift").get<double>();
  g.bank = j.at("bank").get<std::string>();
  g.backgrounds = j.at("backgrounds").get<std::string>();
  g.num_classes = j.at("num_classes").get<int>();
  g.master_seed = j.at("master_seed").get<uint64_t>();
  return g;
}

json record_to_json(const SceneRecord& r) {
  json j{{"image_path", r.image_path},
         {"numerosity", r.numerosity},
         {"class_ids", r.class_ids},
         {"split", r.split},
         {"seed", r.seed}};
  if (r.area_available)
    j["cumulative_area"] = r.cumulative_area;
  else
    j["cumulative_area"] = nullptr;
  json boxes = json::array();
  for (const auto& b : r.object_boxes) boxes.push_back(json{b[0], b[1], b[2], b[3]});
  j["object_boxes"] = boxes;
  return j;
}

SceneRecord record_from_json(const json& j) {
  SceneRecord r;
  r.image_path = j.at("image_path").get<std::string>();
  r.numerosity = j.at("numerosity").get<int>();
  const auto& area = j.at("cumulative_area");
  if (area.is_null()) {
    r.cumulative_area = -1;
    r.area_available = false;
  } else {
    r.cumulative_area = area.get<int64_t>();
    r.area_available = true;
  }
  r.class_ids = j.at("class_ids").get<std::vector<int>>();
  for (const auto& b : j.at("object_boxes")) {
    if (!b.is_array() || b.size() != 4)
      throw FormatError("object_boxes entries must be [x, y, w, h]");
    r.object_boxes.push_back({b[0].get<int64_t>(), b[1].get<int64_t>(),
                              b[2].get<int64_t>(), b[3].get<int64_t>()});
  }
  r.split = j.at("split").get<std::string>();
  r.seed = j.at("seed").get<uint64_t>();
  if (r.numerosity < 0 || r.numerosity > 4)
    throw FormatError("record " + r.image_path + ": numerosity " +
                      std::to_string(r.numerosity) + " outside {0..4}");
  return r;
}

}  // namespace

void save_manifest(const std::string& path, const DatasetManifest& manifest) {
  json header{{"format_version", manifest.format_version},
              {"kind", "numvae_dataset"},
              {"count", manifest.records.size()},
              {"class_counts", manifest.class_counts},
              {"generator", generator_to_json(manifest.generator)}};
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    out << header.dump() << "\n";
    for (const auto& r : manifest.records) out << record_to_json(r).dump() << "\n";
    if (!out) throw IoError("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest: " + path);
  std::string line;
  if (!std::getline(in, line))
    throw FormatError("manifest is empty: " + path);

  DatasetManifest manifest;
  size_t declared_count = 0;
  try {
    const json header = json::parse(line);
    manifest.format_version = header.at("format_version").get<int>();
    if (manifest.format_version != 1)
      throw FormatError("unsupported manifest format_version " +
                        std::to_string(manifest.format_version));
    if (header.at("kind").get<std::string>() != "numvae_dataset")
      throw FormatError("not a dataset manifest: " + path);
    declared_count = header.at("count").get<size_t>();
    const auto counts = header.at("class_counts").get<std::vector<int64_t>>();
    if (counts.size() != 5)
      throw FormatError("class_counts must have 5 entries");
    std::copy(counts.begin(), counts.end(), manifest.class_counts.begin());
    manifest.generator = generator_from_json(header.at("generator"));
  } catch (const json::exception& e) {
    throw FormatError("bad manifest header in " + path + ": " + e.what());
  }

  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      manifest.records.push_back(record_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw FormatError(path + ":" + std::to_string(line_no) +
                        ": bad record: " + e.what());
    }
  }
  if (manifest.records.size() != declared_count)
    throw FormatError(path + ": header declares " +
                      std::to_string(declared_count) + " records, found " +
                      std::to_string(manifest.records.size()));
  return manifest;
}

}  // namespace numvae
