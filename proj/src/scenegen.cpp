#include "numvae/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "numvae/errors.hpp"

namespace numvae {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Asset bank
// ---------------------------------------------------------------------------

void validate_asset(const ObjectAsset& asset, int num_classes) {
  if (asset.pixels.h <= 0 || asset.pixels.w <= 0)
    throw AssetError("asset " + asset.asset_id + ": empty pixel buffer");
  if (static_cast<int64_t>(asset.mask.size()) != asset.pixels.h * asset.pixels.w)
    throw AssetError("asset " + asset.asset_id + ": mask size " +
                     std::to_string(asset.mask.size()) +
                     " does not match pixels " + std::to_string(asset.pixels.h) +
                     "x" + std::to_string(asset.pixels.w));
  if (asset.mask_area() == 0)
    throw AssetError("asset " + asset.asset_id + ": mask has no foreground");
  if (asset.class_id < 0 || asset.class_id >= num_classes)
    throw AssetError("asset " + asset.asset_id + ": class_id " +
                     std::to_string(asset.class_id) + " out of range [0, " +
                     std::to_string(num_classes) + ")");
}

namespace {

// Shape predicates in centered unit coordinates (x, y in [-0.5, 0.5]).
bool shape_inside(int cls, double x, double y) {
  const double r2 = x * x + y * y;
  switch (cls) {
    case 0:  // circle
      return r2 <= 0.42 * 0.42;
    case 1:  // square
      return std::max(std::fabs(x), std::fabs(y)) <= 0.38;
    case 2: {  // triangle, apex up
      if (y < -0.38 || y > 0.40) return false;
      const double half = 0.44 * (y + 0.38) / 0.78;
      return std::fabs(x) <= 0.44 - half;
    }
    case 3:  // ring
      return r2 <= 0.42 * 0.42 && r2 >= 0.24 * 0.24;
    case 4:  // cross
      return (std::fabs(x) <= 0.14 && std::fabs(y) <= 0.42) ||
             (std::fabs(y) <= 0.14 && std::fabs(x) <= 0.42);
    case 5: {  // five-lobed star
      const double theta = std::atan2(y, x);
      const double rad = 0.20 + 0.24 * (0.5 + 0.5 * std::cos(5.0 * theta));
      return r2 <= rad * rad;
    }
    case 6: {  // ellipse
      const double a = x / 0.44, b = y / 0.27;
      return a * a + b * b <= 1.0;
    }
    case 7:  // diamond
      return std::fabs(x) + std::fabs(y) <= 0.44;
    case 8:  // L
      return std::max(std::fabs(x), std::fabs(y)) <= 0.40 &&
             !(x > -0.08 && y < 0.08);
    case 9:  // T
      return (std::fabs(y + 0.27) <= 0.13 && std::fabs(x) <= 0.42) ||
             (std::fabs(x) <= 0.13 && y >= -0.40 && y <= 0.40);
    case 10: {  // crescent
      const double dx = x - 0.16;
      return r2 <= 0.42 * 0.42 && dx * dx + y * y > 0.34 * 0.34;
    }
    case 11: {  // hexagon
      const double q = std::fabs(x), r = std::fabs(y);
      return q <= 0.40 && (0.5 * q + 0.8660254 * r) <= 0.40 * 0.8660254 * 1.1547;
    }
    case 12:  // arrow pointing right
      return (x >= 0.02 && x <= 0.44 && std::fabs(y) <= 0.80 * (0.44 - x)) ||
             (x >= -0.44 && x < 0.02 && std::fabs(y) <= 0.12);
    case 13:  // H bar
      return (std::fabs(std::fabs(x) - 0.29) <= 0.11 && std::fabs(y) <= 0.40) ||
             (std::fabs(y) <= 0.10 && std::fabs(x) <= 0.40);
    case 14: {  // three-circle blob
      const double d1 = (x + 0.12) * (x + 0.12) + (y + 0.08) * (y + 0.08);
      const double d2 = (x - 0.15) * (x - 0.15) + (y + 0.02) * (y + 0.02);
      const double d3 = x * x + (y - 0.17) * (y - 0.17);
      return d1 <= 0.26 * 0.26 || d2 <= 0.23 * 0.23 || d3 <= 0.24 * 0.24;
    }
    default:
      return false;
  }
}

constexpr std::array<std::array<uint8_t, 3>, 15> kPalette = {{
    {220, 70, 60},   // circle: red
    {60, 120, 216},  // square: blue
    {70, 190, 90},   // triangle: green
    {235, 170, 50},  // ring: amber
    {150, 80, 200},  // cross: purple
    {240, 220, 70},  // star: yellow
    {70, 200, 200},  // ellipse: teal
    {230, 110, 170}, // diamond: pink
    {160, 120, 70},  // L: brown
    {90, 90, 220},   // T: indigo
    {245, 245, 240}, // crescent: near-white
    {120, 200, 60},  // hexagon: lime
    {250, 130, 40},  // arrow: orange
    {100, 160, 130}, // H: sage
    {200, 60, 120},  // blob: magenta
}};

const char* kShapeNames[15] = {"circle", "square",   "triangle", "ring",
                               "cross",  "star",     "ellipse",  "diamond",
                               "ell",    "tee",      "crescent", "hexagon",
                               "arrow",  "hbar",     "blob"};

// Simple per-class shading so assets are not flat color patches.
double shade_at(int cls, double x, double y) {
  switch (cls % 3) {
    case 0:  // radial falloff
      return 1.05 - 0.55 * std::sqrt(x * x + y * y) / 0.5;
    case 1:  // diagonal stripes
      return 0.88 + 0.18 * std::sin(22.0 * (x + y));
    default:  // vertical gradient
      return 0.85 + 0.45 * (0.5 - y);
  }
}

}  // namespace

int builtin_num_classes() { return 15; }

std::vector<ObjectAsset> builtin_asset_bank(int64_t canonical) {
  std::vector<ObjectAsset> bank;
  bank.reserve(15);
  for (int cls = 0; cls < 15; ++cls) {
    ObjectAsset a;
    a.asset_id = std::string("builtin/") + kShapeNames[cls];
    a.class_id = cls;
    a.pixels = ImageU8(canonical, canonical, 3);
    a.mask.assign(static_cast<size_t>(canonical * canonical), 0);
    for (int64_t yy = 0; yy < canonical; ++yy) {
      for (int64_t xx = 0; xx < canonical; ++xx) {
        const double u = (static_cast<double>(xx) + 0.5) / canonical - 0.5;
        const double v = (static_cast<double>(yy) + 0.5) / canonical - 0.5;
        if (!shape_inside(cls, u, v)) continue;
        a.mask[static_cast<size_t>(yy * canonical + xx)] = 1;
        const double s = std::clamp(shade_at(cls, u, v), 0.25, 1.25);
        for (int64_t c = 0; c < 3; ++c) {
          const double val = kPalette[static_cast<size_t>(cls)][static_cast<size_t>(c)] * s;
          a.pixels.at(yy, xx, c) = static_cast<uint8_t>(std::clamp(val, 0.0, 255.0));
        }
      }
    }
    validate_asset(a, 15);
    bank.push_back(std::move(a));
  }
  return bank;
}

std::vector<ObjectAsset> load_asset_bank(const std::string& dir) {
  if (!fs::is_directory(dir)) throw AssetError("asset bank dir not found: " + dir);
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (e.path().extension() == ".png" &&
        name.find("_mask.png") == std::string::npos)
      names.push_back(e.path().stem().string());
  }
  std::sort(names.begin(), names.end());
  if (names.empty()) throw AssetError("no assets in " + dir);
  std::vector<ObjectAsset> bank;
  for (size_t i = 0; i < names.size(); ++i) {
    ObjectAsset a;
    a.asset_id = names[i];
    a.class_id = static_cast<int>(i);
    a.pixels = load_png((fs::path(dir) / (names[i] + ".png")).string());
    const auto mask_img =
        load_png((fs::path(dir) / (names[i] + "_mask.png")).string());
    if (mask_img.h != a.pixels.h || mask_img.w != a.pixels.w)
      throw AssetError("asset " + names[i] + ": mask/pixel size mismatch");
    a.mask.resize(static_cast<size_t>(mask_img.h * mask_img.w));
    for (int64_t y = 0; y < mask_img.h; ++y)
      for (int64_t x = 0; x < mask_img.w; ++x)
        a.mask[static_cast<size_t>(y * mask_img.w + x)] =
            mask_img.at(y, x, 0) >= 128 ? 1 : 0;
    validate_asset(a, static_cast<int>(names.size()));
    bank.push_back(std::move(a));
  }
  return bank;
}

std::vector<ImageU8> load_background_dir(const std::string& dir) {
  if (!fs::is_directory(dir)) throw IoError("background dir not found: " + dir);
  std::vector<std::string> paths;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".png") paths.push_back(e.path().string());
  std::sort(paths.begin(), paths.end());
  if (paths.empty()) throw IoError("no .png backgrounds in " + dir);
  std::vector<ImageU8> out;
  out.reserve(paths.size());
  for (const auto& p : paths) out.push_back(load_png(p));
  return out;
}

// ---------------------------------------------------------------------------
// Scene synthesis
// ---------------------------------------------------------------------------

void SceneSpec::validate() const {
  if (numerosity < 0 || numerosity > 4)
    throw ConfigError("numerosity must be in {0..4}, got " +
                      std::to_string(numerosity));
  if (canvas_h < 16 || canvas_w < 16)
    throw ConfigError("canvas must be at least 16x16");
  if (base_scale <= 0.0) throw ConfigError("base_scale must be positive");
  if (base_scale * numerosity > 0.9)
    throw PackingFailure("scene not packable: base_scale*N = " +
                         std::to_string(base_scale * numerosity) + " > 0.9");
  const double base_area = base_scale * static_cast<double>(canvas_h * canvas_w);
  if (base_area < 48.0)
    throw ConfigError("base_scale yields objects under 48 px (" +
                      std::to_string(base_area) +
                      "); too small for exact area control");
  if (scale_jitter < 0.0 || scale_jitter > 0.5)
    throw ConfigError("scale_jitter must be in [0, 0.5]");
}

namespace {

// Seeded two-octave value-noise background.
ImageU8 procedural_background(int64_t h, int64_t w, Rng& rng) {
  std::array<int, 3> base;
  for (auto& b : base) b = static_cast<int>(rng.uniform_int(60, 170));
  const double amp = rng.uniform(30.0, 70.0);
  constexpr int kCoarse = 5, kFine = 17;
  std::array<double, kCoarse * kCoarse> coarse;
  std::array<double, kFine * kFine> fine;
  for (auto& v : coarse) v = rng.uniform();
  for (auto& v : fine) v = rng.uniform();

  auto bilerp = [](const double* grid, int n, double u, double v) {
    const double gx = u * (n - 1), gy = v * (n - 1);
    const int x0 = std::min(static_cast<int>(gx), n - 2);
    const int y0 = std::min(static_cast<int>(gy), n - 2);
    const double fx = gx - x0, fy = gy - y0;
    const double a = grid[y0 * n + x0] * (1 - fx) + grid[y0 * n + x0 + 1] * fx;
    const double b =
        grid[(y0 + 1) * n + x0] * (1 - fx) + grid[(y0 + 1) * n + x0 + 1] * fx;
    return a * (1 - fy) + b * fy;
  };

  ImageU8 img(h, w, 3);
  for (int64_t y = 0; y < h; ++y) {
    const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(h);
    for (int64_t x = 0; x < w; ++x) {
      const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(w);
      const double t = 0.65 * bilerp(coarse.data(), kCoarse, u, v) +
                       0.35 * bilerp(fine.data(), kFine, u, v);
      const double d = amp * (t - 0.5);
      for (int64_t c = 0; c < 3; ++c)
        img.at(y, x, c) = static_cast<uint8_t>(
            std::clamp(base[static_cast<size_t>(c)] + d, 0.0, 255.0));
    }
  }
  return img;
}

struct RenderedObject {
  int64_t w = 0, h = 0;
  std::vector<uint8_t> mask;
  ImageU8 pixels;
  int64_t area = 0;
  std::array<int64_t, 4> tight_box{};  // x, y, w, h inside the buffer
};

struct ObjectTransform {
  double scale = 1.0;
  double angle = 0.0;  // radians
  bool flip = false;
  std::array<double, 3> gains = {1.0, 1.0, 1.0};
};

// Rasterizes the transformed mask only, returning the foreground count.
// Inverse mapping with nearest-neighbour mask lookup: one resampling
// step, so the count is exact for the emitted composite.
int64_t count_mask(const ObjectAsset& asset, const ObjectTransform& t,
                   int64_t oh, int64_t ow) {
  const double cx = static_cast<double>(asset.pixels.w) / 2.0;
  const double cy = static_cast<double>(asset.pixels.h) / 2.0;
  const double ocx = static_cast<double>(ow) / 2.0;
  const double ocy = static_cast<double>(oh) / 2.0;
  const double cosa = std::cos(t.angle), sina = std::sin(t.angle);
  const double inv = 1.0 / t.scale;
  int64_t count = 0;
  for (int64_t y = 0; y < oh; ++y) {
    const double dy = (static_cast<double>(y) + 0.5) - ocy;
    for (int64_t x = 0; x < ow; ++x) {
      const double dx = (static_cast<double>(x) + 0.5) - ocx;
      double ax = (dx * cosa + dy * sina) * inv;
      const double ay = (-dx * sina + dy * cosa) * inv;
      if (t.flip) ax = -ax;
      const int64_t sx = static_cast<int64_t>(std::floor(cx + ax));
      const int64_t sy = static_cast<int64_t>(std::floor(cy + ay));
      if (sx < 0 || sy < 0 || sx >= asset.pixels.w || sy >= asset.pixels.h)
        continue;
      count += asset.mask[static_cast<size_t>(sy * asset.pixels.w + sx)];
    }
  }
  return count;
}

std::pair<int64_t, int64_t> buffer_size(const ObjectAsset& asset,
                                        double scale, double angle) {
  const double aw = static_cast<double>(asset.pixels.w) * scale;
  const double ah = static_cast<double>(asset.pixels.h) * scale;
  const double ca = std::fabs(std::cos(angle)), sa = std::fabs(std::sin(angle));
  const int64_t ow = static_cast<int64_t>(std::ceil(aw * ca + ah * sa)) + 2;
  const int64_t oh = static_cast<int64_t>(std::ceil(aw * sa + ah * ca)) + 2;
  return {oh, ow};
}

// Renders an asset at a target foreground area (in pixels). The scale is
// refined with a few fixed-point iterations so the rendered pixel count
// stays within ~1.5% of the target even for small objects.
RenderedObject render_object(const ObjectAsset& asset, double target_area,
                             ObjectTransform t) {
  const double m0 = static_cast<double>(asset.mask_area());
  t.scale = std::sqrt(target_area / m0);
  double best_scale = t.scale;
  double best_err = std::numeric_limits<double>::infinity();
  for (int attempt = 0; attempt < 8; ++attempt) {
    const auto [oh, ow] = buffer_size(asset, t.scale, t.angle);
    const int64_t count = count_mask(asset, t, oh, ow);
    if (count == 0) {  // degenerate scale; nudge up and retry
      t.scale *= 1.5;
      continue;
    }
    const double err = std::fabs(static_cast<double>(count) - target_area);
    if (err < best_err) {
      best_err = err;
      best_scale = t.scale;
    }
    if (err <= std::max(1.0, 0.015 * target_area)) break;
    t.scale *= std::sqrt(target_area / static_cast<double>(count));
  }
  t.scale = best_scale;

  RenderedObject out;
  const auto [oh, ow] = buffer_size(asset, t.scale, t.angle);
  out.h = oh;
  out.w = ow;
  out.mask.assign(static_cast<size_t>(oh * ow), 0);
  out.pixels = ImageU8(oh, ow, 3);
  const double cx = static_cast<double>(asset.pixels.w) / 2.0;
  const double cy = static_cast<double>(asset.pixels.h) / 2.0;
  const double ocx = static_cast<double>(ow) / 2.0;
  const double ocy = static_cast<double>(oh) / 2.0;
  const double cosa = std::cos(t.angle), sina = std::sin(t.angle);
  const double inv = 1.0 / t.scale;
  int64_t minx = ow, miny = oh, maxx = -1, maxy = -1;
  for (int64_t y = 0; y < oh; ++y) {
    const double dy = (static_cast<double>(y) + 0.5) - ocy;
    for (int64_t x = 0; x < ow; ++x) {
      const double dx = (static_cast<double>(x) + 0.5) - ocx;
      double ax = (dx * cosa + dy * sina) * inv;
      const double ay = (-dx * sina + dy * cosa) * inv;
      if (t.flip) ax = -ax;
      const double fx = cx + ax, fy = cy + ay;
      const int64_t sx = static_cast<int64_t>(std::floor(fx));
      const int64_t sy = static_cast<int64_t>(std::floor(fy));
      if (sx < 0 || sy < 0 || sx >= asset.pixels.w || sy >= asset.pixels.h)
        continue;
      if (!asset.mask[static_cast<size_t>(sy * asset.pixels.w + sx)]) continue;
      out.mask[static_cast<size_t>(y * ow + x)] = 1;
      ++out.area;
      minx = std::min(minx, x);
      maxx = std::max(maxx, x);
      miny = std::min(miny, y);
      maxy = std::max(maxy, y);
      // mask-weighted bilinear colour sample (foreground texels only)
      const double gx = fx - 0.5, gy = fy - 0.5;
      const int64_t x0 = static_cast<int64_t>(std::floor(gx));
      const int64_t y0 = static_cast<int64_t>(std::floor(gy));
      const double wx = gx - static_cast<double>(x0);
      const double wy = gy - static_cast<double>(y0);
      double wsum = 0.0, acc[3] = {0, 0, 0};
      for (int ny = 0; ny <= 1; ++ny) {
        for (int nx = 0; nx <= 1; ++nx) {
          const int64_t px = x0 + nx, py = y0 + ny;
          if (px < 0 || py < 0 || px >= asset.pixels.w || py >= asset.pixels.h)
            continue;
          if (!asset.mask[static_cast<size_t>(py * asset.pixels.w + px)])
            continue;
          const double wgt =
              (nx ? wx : 1.0 - wx) * (ny ? wy : 1.0 - wy);
          if (wgt <= 0.0) continue;
          wsum += wgt;
          for (int64_t c = 0; c < 3; ++c)
            acc[c] += wgt * asset.pixels.at(py, px, c);
        }
      }
      for (int64_t c = 0; c < 3; ++c) {
        double v = wsum > 0.0
                       ? acc[c] / wsum
                       : static_cast<double>(asset.pixels.at(sy, sx, c));
        v *= t.gains[static_cast<size_t>(c)];
        out.pixels.at(y, x, c) = static_cast<uint8_t>(std::clamp(v, 0.0, 255.0));
      }
    }
  }
  out.tight_box = {minx, miny, maxx - minx + 1, maxy - miny + 1};
  return out;
}

}  // namespace

SceneRender synthesize_scene(const SceneSpec& spec,
                             const std::vector<ObjectAsset>& bank,
                             const std::vector<ImageU8>* backgrounds) {
  spec.validate();
  if (bank.empty()) throw AssetError("asset bank is empty");
  for (const auto& a : bank)
    validate_asset(a, static_cast<int>(bank.size()));
  if (spec.forced_class >= static_cast<int>(bank.size()))
    throw ConfigError("forced_class out of range");

  Rng rng(spec.seed);
  const int64_t H = spec.canvas_h, W = spec.canvas_w;

  // Draw order is part of the format: background, then (for single-asset
  // scenes) the shared class, then per object: class (multi-asset),
  // flip, angle, area jitter, colour gains, then placement attempts.
  SceneRender out;
  if (backgrounds && !backgrounds->empty()) {
    const auto idx =
        rng.uniform_int(0, static_cast<int64_t>(backgrounds->size()) - 1);
    const ImageU8& bg = (*backgrounds)[static_cast<size_t>(idx)];
    out.image = (bg.h == H && bg.w == W) ? bg : resize_bilinear(bg, H, W);
  } else {
    out.image = procedural_background(H, W, rng);
  }
  out.occupancy.assign(static_cast<size_t>(H * W), 0);
  out.record.numerosity = spec.numerosity;
  out.record.seed = spec.seed;
  out.record.cumulative_area = 0;
  out.record.area_available = true;

  int shared_class = spec.forced_class;
  if (spec.single_asset && shared_class < 0)
    shared_class =
        static_cast<int>(rng.uniform_int(0, static_cast<int64_t>(bank.size()) - 1));

  const double base_area =
      spec.base_scale * static_cast<double>(H * W);
  int attempts_left = 1000;

  for (int obj = 0; obj < spec.numerosity; ++obj) {
    int cls = shared_class;
    if (!spec.single_asset)
      cls = static_cast<int>(
          rng.uniform_int(0, static_cast<int64_t>(bank.size()) - 1));

    ObjectTransform t;
    t.flip = spec.transforms.hflip && rng.bernoulli(0.5);
    t.angle = rng.uniform(-spec.transforms.rotation_deg,
                          spec.transforms.rotation_deg) * M_PI / 180.0;
    // Jitter targets +/- 0.8*scale_jitter so discretization noise cannot
    // push the rendered area outside the documented +/- scale_jitter band.
    const double jitter =
        1.0 + 0.8 * spec.scale_jitter * rng.uniform(-1.0, 1.0);
    for (auto& g : t.gains)
      g = 1.0 + spec.transforms.color_shift * rng.uniform(-1.0, 1.0);

    auto rendered =
        render_object(bank[static_cast<size_t>(cls)], base_area * jitter, t);
    // Invariant: every rendered area stays within +/- scale_jitter of the
    // scene's base area (with a small absolute allowance for tiny
    // objects). If discretization pushed it out, re-render at the exact
    // base target — that always lands comfortably inside the band.
    const double tol_px =
        std::max(spec.scale_jitter * base_area, std::max(2.0, 0.02 * base_area));
    if (std::fabs(static_cast<double>(rendered.area) - base_area) > tol_px)
      rendered = render_object(bank[static_cast<size_t>(cls)], base_area, t);
    if (std::fabs(static_cast<double>(rendered.area) - base_area) > tol_px)
      throw AssetError("asset " + bank[static_cast<size_t>(cls)].asset_id +
                       ": area control failed (target " +
                       std::to_string(base_area) + ", got " +
                       std::to_string(rendered.area) + ")");
    if (rendered.area == 0)
      throw AssetError("asset " + bank[static_cast<size_t>(cls)].asset_id +
                       " rendered to an empty mask");
    if (rendered.w > W || rendered.h > H)
      throw PackingFailure("object (" + std::to_string(rendered.w) + "x" +
                           std::to_string(rendered.h) +
                           ") does not fit the canvas");

    bool placed = false;
    while (attempts_left > 0 && !placed) {
      --attempts_left;
      const int64_t px = rng.uniform_int(0, W - rendered.w);
      const int64_t py = rng.uniform_int(0, H - rendered.h);
      if (!spec.allow_overlap) {
        bool collides = false;
        for (int64_t y = 0; y < rendered.h && !collides; ++y) {
          const uint8_t* mrow = rendered.mask.data() + y * rendered.w;
          const uint8_t* orow = out.occupancy.data() + (py + y) * W + px;
          for (int64_t x = 0; x < rendered.w; ++x)
            if (mrow[x] && orow[x]) {
              collides = true;
              break;
            }
        }
        if (collides) continue;
      }
      for (int64_t y = 0; y < rendered.h; ++y) {
        for (int64_t x = 0; x < rendered.w; ++x) {
          if (!rendered.mask[static_cast<size_t>(y * rendered.w + x)]) continue;
          out.occupancy[static_cast<size_t>((py + y) * W + px + x)] = 1;
          for (int64_t c = 0; c < 3; ++c)
            out.image.at(py + y, px + x, c) = rendered.pixels.at(y, x, c);
        }
      }
      out.record.class_ids.push_back(cls);
      out.record.object_boxes.push_back({px + rendered.tight_box[0],
                                         py + rendered.tight_box[1],
                                         rendered.tight_box[2],
                                         rendered.tight_box[3]});
      out.record.cumulative_area += rendered.area;
      placed = true;
    }
    if (!placed)
      throw PackingFailure("placement budget exhausted after placing " +
                           std::to_string(obj) + " of " +
                           std::to_string(spec.numerosity) + " objects");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset building
// ---------------------------------------------------------------------------

GeneratorConfig GeneratorConfig::make(const std::string& preset) {
  GeneratorConfig c;
  c.preset = preset;
  if (preset == "desk") {
    // defaults as declared
  } else if (preset == "probe") {
    c.single_asset = true;
  } else if (preset == "warmup") {
    c.canvas_h = c.canvas_w = 160;
    c.scale_lo = 0.004;
    c.scale_hi = 0.05;
  } else {
    throw ConfigError("unknown generator preset \"" + preset + "\"");
  }
  return c;
}

SceneSpec scene_spec_for_record(const GeneratorConfig& config,
                                uint64_t record_seed) {
  Rng rng(record_seed);
  SceneSpec spec;
  spec.canvas_h = config.canvas_h;
  spec.canvas_w = config.canvas_w;
  spec.numerosity = static_cast<int>(rng.uniform_int(0, 4));
  spec.base_scale =
      std::exp(rng.uniform(std::log(config.scale_lo), std::log(config.scale_hi)));
  spec.scale_jitter = config.scale_jitter;
  spec.single_asset = config.single_asset;
  spec.allow_overlap = config.allow_overlap;
  spec.transforms = config.transforms;
  spec.seed = rng.next_u64();
  return spec;
}

namespace {

std::string record_image_name(int64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "images/%06lld.png",
                static_cast<long long>(index));
  return buf;
}

std::string split_for_index(uint64_t master_seed, int64_t index,
                            const std::array<double, 3>& fractions) {
  Rng rng(derive_seed(master_seed, seed_stream::kSplitAssign,
                      static_cast<uint64_t>(index)));
  const double u = rng.uniform();
  if (u < fractions[0]) return "train";
  if (u < fractions[0] + fractions[1]) return "val";
  return "test";
}

// Deterministic retry ladder shared by build_dataset and verify_manifest.
// Stage 0 keeps the scene identity and only advances the draw/placement
// stream; later stages shrink base_scale by 15% steps (numerosity and
// the record seed are untouched) because a persistent packing or
// area-control failure signals the drawn scale was too large for the
// canvas. Every seed derives from the record seed, so a replay walks the
// identical ladder and reproduces the same bytes.
SceneRender synthesize_record(const GeneratorConfig& config,
                              uint64_t record_seed,
                              const std::vector<ObjectAsset>& bank,
                              const std::vector<ImageU8>* backgrounds) {
  const SceneSpec base = scene_spec_for_record(config, record_seed);
  const double min_scale =
      48.5 / static_cast<double>(base.canvas_h * base.canvas_w);
  std::exception_ptr last;
  for (int stage = 0; stage <= 4; ++stage) {
    SceneSpec spec = base;
    if (stage > 0)
      spec.base_scale =
          std::max(base.base_scale * std::pow(0.85, stage), min_scale);
    const int tries = stage == 0 ? 21 : 8;
    for (int retry = 0; retry < tries; ++retry) {
      if (stage == 0)
        spec.seed = retry == 0 ? base.seed
                               : derive_seed(record_seed, 0x9ac,
                                             static_cast<uint64_t>(retry - 1));
      else
        spec.seed = derive_seed(record_seed, 0x9ad,
                                static_cast<uint64_t>(stage * 8 + retry));
      try {
        return synthesize_scene(spec, bank, backgrounds);
      } catch (const PackingFailure&) {
        last = std::current_exception();
      } catch (const AssetError&) {
        last = std::current_exception();
      }
    }
  }
  std::rethrow_exception(last);
}

}  // namespace

DatasetManifest build_dataset(const GeneratorConfig& config, int64_t count,
                              const std::array<double, 3>& split_fractions,
                              const std::vector<ObjectAsset>& bank,
                              const std::string& out_dir,
                              const std::vector<ImageU8>* backgrounds) {
  if (count < 1) throw ConfigError("count must be >= 1");
  const double fsum = split_fractions[0] + split_fractions[1] + split_fractions[2];
  if (std::fabs(fsum - 1.0) > 1e-9)
    throw ConfigError("split fractions must sum to 1");
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "images", ec);
  if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());

  DatasetManifest manifest;
  manifest.generator = config;
  manifest.records.resize(static_cast<size_t>(count));

  std::vector<std::string> errors(static_cast<size_t>(count));
  parallel_for(count, [&](int64_t i) {
    const uint64_t record_seed =
        derive_seed(config.master_seed, seed_stream::kSceneRecord,
                    static_cast<uint64_t>(i));
    try {
      SceneRender render = synthesize_record(config, record_seed, bank, backgrounds);
      render.record.image_path = record_image_name(i);
      render.record.seed = record_seed;
      render.record.split =
          split_for_index(config.master_seed, i, split_fractions);
      save_png((fs::path(out_dir) / render.record.image_path).string(),
               render.image);
      manifest.records[static_cast<size_t>(i)] = std::move(render.record);
    } catch (const std::exception& e) {
      errors[static_cast<size_t>(i)] = e.what();
    }
  });
  for (int64_t i = 0; i < count; ++i)
    if (!errors[static_cast<size_t>(i)].empty())
      throw DataError("record " + std::to_string(i) + ": " +
                      errors[static_cast<size_t>(i)]);

  manifest.class_counts = manifest.recount();
  save_manifest((fs::path(out_dir) / "manifest.jsonl").string(), manifest);
  return manifest;
}

// ---------------------------------------------------------------------------
// External ingestion
// ---------------------------------------------------------------------------

DatasetManifest ingest_external_dataset(const std::string& root_dir,
                                        const std::string& label_file,
                                        const std::string& out_dir,
                                        int64_t canvas_h, int64_t canvas_w,
                                        const std::array<double, 3>& split_fractions,
                                        uint64_t master_seed) {
  std::ifstream in(label_file);
  if (!in) throw IoError("cannot open label file: " + label_file);

  std::vector<std::pair<std::string, int>> rows;
  std::string line;
  int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    // strip whitespace and skip blank lines / comments
    while (!line.empty() && (line.back() == '\r' || line.back() == ' '))
      line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos || comma == 0 || comma + 1 >= line.size())
      throw FormatError(label_file + ":" + std::to_string(line_no) +
                        ": expected \"filename,label\"");
    const std::string name = line.substr(0, comma);
    std::string label = line.substr(comma + 1);
    int n;
    if (label == "4+") {
      n = 4;  // the subitizing range caps at 4
    } else if (label.size() == 1 && label[0] >= '0' && label[0] <= '4') {
      n = label[0] - '0';
    } else {
      throw FormatError(label_file + ":" + std::to_string(line_no) +
                        ": label \"" + label +
                        "\" outside the subitizing range {0..4, 4+}");
    }
    rows.emplace_back(name, n);
  }
  if (rows.empty())
    throw FormatError(label_file + ": no label rows found");

  std::string missing;
  int64_t missing_count = 0;
  for (const auto& [name, _] : rows) {
    if (!fs::exists(fs::path(root_dir) / name)) {
      ++missing_count;
      if (!missing.empty()) missing += ", ";
      if (missing_count <= 10) missing += name;
    }
  }
  if (missing_count > 0)
    throw MissingImageError(std::to_string(missing_count) +
                            " labeled image(s) missing under " + root_dir +
                            ": " + missing);

  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "images", ec);
  if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());

  DatasetManifest manifest;
  manifest.generator = GeneratorConfig::make("desk");
  manifest.generator.preset = "external";
  manifest.generator.canvas_h = canvas_h;
  manifest.generator.canvas_w = canvas_w;
  manifest.generator.bank = "external";
  manifest.generator.backgrounds = "external";
  manifest.generator.master_seed = master_seed;
  manifest.records.resize(rows.size());

  parallel_for(static_cast<int64_t>(rows.size()), [&](int64_t i) {
    const auto& [name, n] = rows[static_cast<size_t>(i)];
    const auto img = load_png((fs::path(root_dir) / name).string());
    const auto resized = (img.h == canvas_h && img.w == canvas_w)
                             ? img
                             : resize_bilinear(img, canvas_h, canvas_w);
    SceneRecord rec;
    rec.image_path = record_image_name(i);
    rec.numerosity = n;
    rec.cumulative_area = -1;
    rec.area_available = false;
    rec.class_ids.assign(static_cast<size_t>(n), -1);
    rec.split = split_for_index(master_seed, i, split_fractions);
    rec.seed = 0;
    save_png((fs::path(out_dir) / rec.image_path).string(), resized);
    manifest.records[static_cast<size_t>(i)] = std::move(rec);
  });

  manifest.class_counts = manifest.recount();
  save_manifest((fs::path(out_dir) / "manifest.jsonl").string(), manifest);
  return manifest;
}

// ---------------------------------------------------------------------------
// Verification
// ---------------------------------------------------------------------------

VerifyReport verify_manifest(const std::string& manifest_path,
                             int64_t rerender_limit) {
  const DatasetManifest manifest = load_manifest(manifest_path);
  const fs::path base = fs::path(manifest_path).parent_path();
  VerifyReport report;

  const auto recounted = manifest.recount();
  if (recounted != manifest.class_counts) {
    std::string d = "declared [";
    for (auto v : manifest.class_counts) d += std::to_string(v) + " ";
    d += "] vs recounted [";
    for (auto v : recounted) d += std::to_string(v) + " ";
    d += "]";
    report.violations.push_back({"HistogramMismatch", d});
  }

  const bool synthetic = manifest.generator.bank != "external";
  std::vector<ObjectAsset> bank;
  std::vector<ImageU8> ext_backgrounds;
  const std::vector<ImageU8>* bg = nullptr;
  if (synthetic && rerender_limit != 0) {
    bank = manifest.generator.bank == "builtin15"
               ? builtin_asset_bank()
               : load_asset_bank(manifest.generator.bank);
    if (manifest.generator.backgrounds != "builtin") {
      ext_backgrounds = load_background_dir(manifest.generator.backgrounds);
      bg = &ext_backgrounds;
    }
  }

  int64_t rerendered = 0;
  for (size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& rec = manifest.records[i];
    ++report.records_checked;
    const std::string tag = "record " + std::to_string(i) + " (" +
                            rec.image_path + ")";
    if (static_cast<int>(rec.class_ids.size()) != rec.numerosity)
      report.violations.push_back(
          {"LengthMismatch", tag + ": class_ids length " +
                                 std::to_string(rec.class_ids.size()) +
                                 " != N " + std::to_string(rec.numerosity)});
    ImageU8 img;
    try {
      img = load_png((base / rec.image_path).string());
    } catch (const MissingImageError&) {
      report.violations.push_back({"MissingImage", tag});
      continue;
    }
    if (img.h != manifest.generator.canvas_h ||
        img.w != manifest.generator.canvas_w) {
      report.violations.push_back(
          {"CanvasMismatch", tag + ": " + std::to_string(img.h) + "x" +
                                 std::to_string(img.w)});
      continue;
    }
    if (!synthetic || rerender_limit == 0 ||
        (rerender_limit > 0 && rerendered >= rerender_limit))
      continue;

    ++rerendered;
    ++report.records_rerendered;
    // replay the retry ladder exactly as build_dataset did
    SceneRender render;
    try {
      render = synthesize_record(manifest.generator, rec.seed, bank, bg);
    } catch (const Error& e) {
      report.violations.push_back(
          {"RenderMismatch", tag + ": replay failed: " + e.what()});
      continue;
    }
    if (render.image.pixels != img.pixels)
      report.violations.push_back({"RenderMismatch", tag + ": pixels differ"});
    if (render.record.cumulative_area != rec.cumulative_area)
      report.violations.push_back(
          {"AreaMismatch",
           tag + ": A " + std::to_string(rec.cumulative_area) + " vs re-render " +
               std::to_string(render.record.cumulative_area)});
    // Disjointness: the composite occupancy count must equal the sum of
    // per-object areas (hard pastes cannot share pixels).
    int64_t occ = 0;
    for (uint8_t m : render.occupancy) occ += m;
    if (!manifest.generator.allow_overlap &&
        occ != render.record.cumulative_area)
      report.violations.push_back(
          {"OverlapViolation", tag + ": occupancy " + std::to_string(occ) +
                                   " vs area sum " +
                                   std::to_string(render.record.cumulative_area)});
  }
  return report;
}

}  // namespace numvae
