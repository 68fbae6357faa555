#include "numvae/cli_io.hpp"

#include <unistd.h>

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "numvae/errors.hpp"

namespace numvae {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// atomic small files
// ---------------------------------------------------------------------------

void write_file_atomic(const std::string& path, const std::string& contents) {
  const fs::path target(path);
  if (target.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(target.parent_path(), ec);
  }
  const fs::path tmp =
      target.parent_path() /
      (target.filename().string() + ".tmp." + std::to_string(::getpid()));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot move " + tmp.string() + " into place: " + ec.message());
  }
}

// ---------------------------------------------------------------------------
// ConfigResolver
// ---------------------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

// "key = value" -> (key, value); comments and blanks return false
bool parse_kv_line(const std::string& line, std::string& key, std::string& value) {
  const std::string t = trim(line);
  if (t.empty() || t[0] == '#') return false;
  const size_t eq = t.find('=');
  if (eq == std::string::npos)
    throw ConfigError("expected key=value, got \"" + t + "\"");
  key = trim(t.substr(0, eq));
  value = trim(t.substr(eq + 1));
  if (key.empty()) throw ConfigError("empty key in \"" + t + "\"");
  return true;
}

}  // namespace

void ConfigResolver::declare(const std::string& key,
                             const std::string& default_value) {
  for (const auto& [k, v] : entries_)
    if (k == key) throw ConfigError("duplicate config key \"" + key + "\"");
  entries_.emplace_back(key, default_value);
}

bool ConfigResolver::known(const std::string& key) const {
  for (const auto& [k, v] : entries_)
    if (k == key) return true;
  return false;
}

void ConfigResolver::set_checked(const std::string& key,
                                 const std::string& value,
                                 const std::string& where) {
  for (auto& [k, v] : entries_) {
    if (k == key) {
      v = value;
      return;
    }
  }
  throw ConfigError(where + ": unknown key \"" + key + "\"");
}

void ConfigResolver::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string key, value;
    try {
      if (!parse_kv_line(line, key, value)) continue;
    } catch (const ConfigError& e) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    set_checked(key, value, path + ":" + std::to_string(lineno));
  }
}

void ConfigResolver::apply_overrides(const std::vector<std::string>& items) {
  for (const auto& item : items) {
    std::string key, value;
    try {
      if (!parse_kv_line(item, key, value))
        throw ConfigError("empty override");
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("override \"") + item + "\": " + e.what());
    }
    set_checked(key, value, "override \"" + item + "\"");
  }
}

const std::string& ConfigResolver::get(const std::string& key) const {
  for (const auto& [k, v] : entries_)
    if (k == key) return v;
  throw ConfigError("undeclared config key \"" + key + "\"");
}

double ConfigResolver::get_double(const std::string& key) const {
  const std::string& s = get(key);
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0')
    throw ConfigError("key \"" + key + "\": \"" + s + "\" is not a number");
  return v;
}

int64_t ConfigResolver::get_int(const std::string& key) const {
  const std::string& s = get(key);
  char* end = nullptr;
  const long long v = std::strtoll(s.c_str(), &end, 10);
  if (end == s.c_str() || *end != '\0')
    throw ConfigError("key \"" + key + "\": \"" + s + "\" is not an integer");
  return static_cast<int64_t>(v);
}

bool ConfigResolver::get_bool(const std::string& key) const {
  const std::string& s = get(key);
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("key \"" + key + "\": \"" + s + "\" is not a boolean");
}

std::string ConfigResolver::resolved_text() const {
  std::string out;
  for (const auto& [k, v] : entries_) {
    out += k;
    out += " = ";
    out += v;
    out += '\n';
  }
  return out;
}

void ConfigResolver::write_resolved(const std::string& dir) const {
  write_file_atomic((fs::path(dir) / "resolved_config.txt").string(),
                    resolved_text());
}

// ---------------------------------------------------------------------------
// trainer config binding
// ---------------------------------------------------------------------------

namespace {

std::string bool_str(bool b) { return b ? "true" : "false"; }

void declare_train_keys(ConfigResolver& r, const TrainConfig& d) {
  r.declare("alpha", format_g9(d.alpha));
  r.declare("beta", format_g9(d.beta));
  r.declare("lr_initial", format_g9(d.lr_initial));
  r.declare("lr_decay_factor", format_g9(d.lr_decay_factor));
  r.declare("plateau_epochs", std::to_string(d.plateau_epochs));
  r.declare("plateau_min_rel_improvement",
            format_g9(d.plateau_min_rel_improvement));
  r.declare("total_epochs", std::to_string(d.total_epochs));
  r.declare("warmup_epochs", std::to_string(d.warmup_epochs));
  r.declare("mix_ramp_end_epoch", std::to_string(d.mix_ramp_end_epoch));
  r.declare("mix_target_fraction", format_g9(d.mix_target_fraction));
  r.declare("batch_size", std::to_string(d.batch_size));
  r.declare("master_seed", std::to_string(d.master_seed));
  r.declare("rebalance_fraction", format_g9(d.rebalance_fraction));
  r.declare("momentum", format_g9(d.momentum));
  r.declare("hflip", bool_str(d.augmentation.hflip));
  r.declare("crop", bool_str(d.augmentation.crop));
  r.declare("crop_area_lo", format_g9(d.augmentation.crop_area_lo));
  r.declare("color_shift", bool_str(d.augmentation.color_shift));
  r.declare("color_shift_range", format_g9(d.augmentation.color_shift_range));
  r.declare("perceptual_enabled", bool_str(d.perceptual_enabled));
  r.declare("pixel_enabled", bool_str(d.pixel_enabled));
  r.declare("max_train_records", std::to_string(d.max_train_records));
  r.declare("max_val_records", std::to_string(d.max_val_records));
  const FeatureExtractorSpec ex;
  r.declare("extractor_gain", format_g9(ex.builtin_gain));
  r.declare("extractor_seed", std::to_string(ex.builtin_seed));
  r.declare("extractor_weights", "");
}

}  // namespace

ConfigResolver make_train_resolver(const std::string& config_path,
                                   const std::vector<std::string>& overrides) {
  // First pass: the preset decides every other default, and may itself be
  // set in the file or on the command line.
  std::string preset = "desk";
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw IoError("cannot open config file " + config_path);
    std::string line, key, value;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      try {
        if (parse_kv_line(line, key, value) && key == "preset") preset = value;
      } catch (const ConfigError& e) {
        throw ConfigError(config_path + ":" + std::to_string(lineno) + ": " +
                          e.what());
      }
    }
  }
  for (const auto& item : overrides) {
    std::string key, value;
    if (parse_kv_line(item, key, value) && key == "preset") preset = value;
  }

  const TrainConfig defaults = TrainConfig::make(preset);  // validates preset
  ConfigResolver r;
  r.declare("preset", preset);
  declare_train_keys(r, defaults);
  if (!config_path.empty()) r.load_file(config_path);
  r.apply_overrides(overrides);
  return r;
}

TrainConfig train_config_from(const ConfigResolver& r) {
  TrainConfig c = TrainConfig::make(r.get("preset"));
  c.alpha = r.get_double("alpha");
  c.beta = r.get_double("beta");
  c.lr_initial = r.get_double("lr_initial");
  c.lr_decay_factor = r.get_double("lr_decay_factor");
  c.plateau_epochs = static_cast<int>(r.get_int("plateau_epochs"));
  c.plateau_min_rel_improvement = r.get_double("plateau_min_rel_improvement");
  c.total_epochs = static_cast<int>(r.get_int("total_epochs"));
  c.warmup_epochs = static_cast<int>(r.get_int("warmup_epochs"));
  c.mix_ramp_end_epoch = static_cast<int>(r.get_int("mix_ramp_end_epoch"));
  c.mix_target_fraction = r.get_double("mix_target_fraction");
  c.batch_size = static_cast<int>(r.get_int("batch_size"));
  c.master_seed = static_cast<uint64_t>(r.get_int("master_seed"));
  c.rebalance_fraction = r.get_double("rebalance_fraction");
  c.momentum = r.get_double("momentum");
  c.augmentation.hflip = r.get_bool("hflip");
  c.augmentation.crop = r.get_bool("crop");
  c.augmentation.crop_area_lo = r.get_double("crop_area_lo");
  c.augmentation.color_shift = r.get_bool("color_shift");
  c.augmentation.color_shift_range = r.get_double("color_shift_range");
  c.perceptual_enabled = r.get_bool("perceptual_enabled");
  c.pixel_enabled = r.get_bool("pixel_enabled");
  c.max_train_records = r.get_int("max_train_records");
  c.max_val_records = r.get_int("max_val_records");
  c.validate();
  return c;
}

ArchitectureConfig arch_config_from(const ConfigResolver& r) {
  auto arch = ArchitectureConfig::make(r.get("preset"));
  arch.validate();
  return arch;
}

FeatureExtractorSpec extractor_spec_from(const ConfigResolver& r) {
  const auto arch = arch_config_from(r);
  FeatureExtractorSpec spec;
  spec.input_h = arch.input_h;
  spec.input_w = arch.input_w;
  spec.input_c = arch.input_c;
  spec.builtin_gain = r.get_double("extractor_gain");
  spec.builtin_seed = static_cast<uint64_t>(r.get_int("extractor_seed"));
  const std::string weights = r.get("extractor_weights");
  if (!weights.empty()) {
    spec.source = FeatureExtractorSpec::Source::kExternalFile;
    spec.weights_path = weights;
  }
  spec.graph = FeatureExtractorSpec::make_builtin_graph(spec.input_c);
  return spec;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

std::string format_g9(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

namespace {

bool needs_quoting(const std::string& cell) {
  if (cell.empty()) return false;
  if (std::isspace(static_cast<unsigned char>(cell.front())) ||
      std::isspace(static_cast<unsigned char>(cell.back())))
    return true;
  return cell.find_first_of(",\"\n") != std::string::npos;
}

std::string quote_cell(const std::string& cell) {
  if (!needs_quoting(cell)) return cell;
  std::string out = "\"";
  for (char ch : cell) {
    if (ch == '"') out += '"';
    out += ch;
  }
  out += '"';
  return out;
}

std::string join_row(const std::vector<std::string>& row) {
  std::string line;
  for (size_t i = 0; i < row.size(); ++i) {
    if (i) line += ',';
    line += quote_cell(row[i]);
  }
  return line;
}

std::vector<std::string> split_csv_line(const std::string& line,
                                        const std::string& where) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  size_t i = 0;
  while (i < line.size()) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          i += 2;
          continue;
        }
        quoted = false;
        ++i;
        continue;
      }
      cur += ch;
      ++i;
      continue;
    }
    if (ch == '"' && cur.empty()) {
      quoted = true;
      ++i;
      continue;
    }
    if (ch == ',') {
      cells.push_back(cur);
      cur.clear();
      ++i;
      continue;
    }
    cur += ch;
    ++i;
  }
  if (quoted) throw FormatError(where + ": unterminated quote");
  cells.push_back(cur);
  return cells;
}

}  // namespace

void write_csv(const std::string& path, const CsvTable& table) {
  for (const auto& row : table.rows)
    if (row.size() != table.header.size())
      throw FormatError("csv row width " + std::to_string(row.size()) +
                        " != header width " +
                        std::to_string(table.header.size()));
  std::string out = join_row(table.header);
  out += '\n';
  for (const auto& row : table.rows) {
    out += join_row(row);
    out += '\n';
  }
  write_file_atomic(path, out);
}

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  CsvTable table;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string where = path + ":" + std::to_string(lineno);
    auto cells = split_csv_line(line, where);
    if (lineno == 1) {
      table.header = std::move(cells);
      continue;
    }
    if (cells.size() != table.header.size())
      throw FormatError(where + ": expected " +
                        std::to_string(table.header.size()) + " cells, got " +
                        std::to_string(cells.size()));
    table.rows.push_back(std::move(cells));
  }
  if (lineno == 0) throw FormatError(path + ": empty csv");
  return table;
}

void write_table_text(const std::string& path, const CsvTable& table) {
  std::vector<size_t> width(table.header.size(), 0);
  auto widen = [&](const std::vector<std::string>& row) {
    for (size_t i = 0; i < row.size(); ++i)
      width[i] = std::max(width[i], row[i].size());
  };
  widen(table.header);
  for (const auto& row : table.rows) {
    if (row.size() != table.header.size())
      throw FormatError("table row width mismatch");
    widen(row);
  }
  std::string out;
  auto emit = [&](const std::vector<std::string>& row) {
    for (size_t i = 0; i < row.size(); ++i) {
      out += row[i];
      if (i + 1 < row.size())
        out.append(width[i] - row[i].size() + 2, ' ');
    }
    out += '\n';
  };
  emit(table.header);
  for (const auto& row : table.rows) emit(row);
  write_file_atomic(path, out);
}

// ---------------------------------------------------------------------------
// plots
// ---------------------------------------------------------------------------

namespace {

struct Rgb {
  uint8_t r, g, b;
};

void put_px(ImageU8& img, int64_t y, int64_t x, Rgb c) {
  if (y < 0 || x < 0 || y >= img.h || x >= img.w) return;
  img.at(y, x, 0) = c.r;
  img.at(y, x, 1) = c.g;
  img.at(y, x, 2) = c.b;
}

void fill_rect(ImageU8& img, int64_t y0, int64_t x0, int64_t h, int64_t w,
               Rgb c) {
  for (int64_t y = y0; y < y0 + h; ++y)
    for (int64_t x = x0; x < x0 + w; ++x) put_px(img, y, x, c);
}

void draw_line(ImageU8& img, int64_t y0, int64_t x0, int64_t y1, int64_t x1,
               Rgb c) {
  const int64_t dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const int64_t sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int64_t err = dx + dy;
  while (true) {
    put_px(img, y0, x0, c);
    if (x0 == x1 && y0 == y1) break;
    const int64_t e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

}  // namespace

ImageU8 render_traversal_image(const TraversalGrid& grid) {
  if (grid.images.empty()) throw ShapeError("traversal grid has no images");
  const int64_t rows = static_cast<int64_t>(grid.dims.size());
  const int64_t cols = static_cast<int64_t>(grid.deltas.size());
  if (rows * cols != static_cast<int64_t>(grid.images.size()))
    throw ShapeError("traversal grid size mismatch");
  const Tensor<float>& first = grid.images.front();
  const int64_t h = first.dim(2), w = first.dim(3);
  const int64_t sep = 2;
  ImageU8 out(rows * h + (rows + 1) * sep, cols * w + (cols + 1) * sep, 3);
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t col = 0; col < cols; ++col) {
      const ImageU8 tile = tensor_to_image(
          grid.images[static_cast<size_t>(r * cols + col)]);
      const int64_t oy = sep + r * (h + sep), ox = sep + col * (w + sep);
      for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
          for (int64_t ch = 0; ch < 3; ++ch)
            out.at(oy + y, ox + x, ch) = tile.at(y, x, ch);
    }
  return out;
}

ImageU8 render_profile_image(const ResponseProfile& profile) {
  const int64_t W = 640, H = 400;
  const int64_t ml = 46, mr = 14, mt = 14, mb = 34;  // margins
  ImageU8 img(H, W, 3);
  std::fill(img.pixels.begin(), img.pixels.end(), uint8_t{255});

  const int64_t n_bins = static_cast<int64_t>(profile.bin_edges.size()) - 1;
  if (n_bins < 1) return img;

  // y range over populated cells (mean +/- std where available)
  double lo = 1e300, hi = -1e300;
  auto stretch = [&](const ProfileCell& c) {
    if (c.count == 0) return;
    const double s = c.has_std ? c.std_z : 0.0;
    lo = std::min(lo, c.mean_z - s);
    hi = std::max(hi, c.mean_z + s);
  };
  for (const auto& row : profile.cells)
    for (const auto& c : row) stretch(c);
  stretch(profile.zero_numerosity);
  if (lo > hi) {
    lo = -1.0;
    hi = 1.0;
  }
  if (hi - lo < 1e-9) {
    lo -= 1.0;
    hi += 1.0;
  }
  const double pad = 0.06 * (hi - lo);
  lo -= pad;
  hi += pad;

  const auto x_at = [&](int64_t bin) {
    return ml + (W - ml - mr) * (2 * bin + 1) / (2 * n_bins);
  };
  const auto y_at = [&](double v) {
    return mt + static_cast<int64_t>(
                    (H - mt - mb - 1) * (hi - v) / (hi - lo) + 0.5);
  };

  const Rgb axis{60, 60, 60};
  draw_line(img, H - mb, ml, H - mb, W - mr, axis);      // x axis
  draw_line(img, mt, ml, H - mb, ml, axis);              // y axis
  if (lo < 0.0 && hi > 0.0)                              // z = 0 guide
    draw_line(img, y_at(0.0), ml, y_at(0.0), W - mr, Rgb{210, 210, 210});

  // N = 0 baseline: a flat light-gray band across the plot
  if (profile.zero_numerosity.count > 0) {
    const int64_t y = y_at(profile.zero_numerosity.mean_z);
    draw_line(img, y, ml, y, W - mr, Rgb{150, 150, 150});
  }

  const Rgb palette[4] = {
      {31, 119, 180}, {255, 127, 14}, {44, 160, 44}, {214, 39, 40}};
  for (size_t n = 0; n < profile.cells.size(); ++n) {
    const Rgb c = palette[n % 4];
    int64_t prev_bin = -2, prev_y = 0;
    for (int64_t b = 0; b < n_bins; ++b) {
      const auto& cell = profile.cells[n][static_cast<size_t>(b)];
      if (cell.count == 0) {
        prev_bin = -2;  // gap: break the polyline
        continue;
      }
      const int64_t x = x_at(b), y = y_at(cell.mean_z);
      if (cell.has_std) {
        const int64_t yl = y_at(cell.mean_z - cell.std_z);
        const int64_t yh = y_at(cell.mean_z + cell.std_z);
        draw_line(img, yh, x, yl, x, c);
        draw_line(img, yh, x - 2, yh, x + 2, c);
        draw_line(img, yl, x - 2, yl, x + 2, c);
      }
      fill_rect(img, y - 1, x - 1, 3, 3, c);
      if (prev_bin == b - 1) draw_line(img, prev_y, x_at(b - 1), y, x, c);
      prev_bin = b;
      prev_y = y;
    }
  }
  return img;
}

}  // namespace numvae
