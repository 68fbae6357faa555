#include "numvae/image.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "numvae/errors.hpp"

namespace numvae {

ImageU8 load_png(const std::string& path) {
  cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
  if (bgr.empty())
    throw MissingImageError("cannot read image: " + path);
  ImageU8 img(bgr.rows, bgr.cols, 3);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      img.at(y, x, 0) = row[x][2];
      img.at(y, x, 1) = row[x][1];
      img.at(y, x, 2) = row[x][0];
    }
  }
  return img;
}

void save_png(const std::string& path, const ImageU8& img) {
  if (img.c != 3) throw IoError("save_png supports 3-channel images only");
  cv::Mat bgr(static_cast<int>(img.h), static_cast<int>(img.w), CV_8UC3);
  for (int64_t y = 0; y < img.h; ++y) {
    auto* row = bgr.ptr<cv::Vec3b>(static_cast<int>(y));
    for (int64_t x = 0; x < img.w; ++x) {
      row[x][0] = img.at(y, x, 2);
      row[x][1] = img.at(y, x, 1);
      row[x][2] = img.at(y, x, 0);
    }
  }
  const auto dir = std::filesystem::path(path).parent_path();
  if (!dir.empty()) std::filesystem::create_directories(dir);
  // Fixed compression level keeps output bytes independent of the
  // OpenCV default, which has changed across releases.
  if (!cv::imwrite(path, bgr, {cv::IMWRITE_PNG_COMPRESSION, 6}))
    throw IoError("cannot write image: " + path);
}

ImageU8 resize_bilinear(const ImageU8& img, int64_t out_h, int64_t out_w) {
  if (out_h <= 0 || out_w <= 0) throw DomainError("resize: non-positive size");
  ImageU8 out(out_h, out_w, img.c);
  const double sy = static_cast<double>(img.h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(img.w) / static_cast<double>(out_w);
  for (int64_t y = 0; y < out_h; ++y) {
    // pixel-center alignment, clamped at the borders
    const double fy = std::max(0.0, (y + 0.5) * sy - 0.5);
    const int64_t y0 = std::min<int64_t>(static_cast<int64_t>(fy), img.h - 1);
    const int64_t y1 = std::min<int64_t>(y0 + 1, img.h - 1);
    const double wy = fy - static_cast<double>(y0);
    for (int64_t x = 0; x < out_w; ++x) {
      const double fx = std::max(0.0, (x + 0.5) * sx - 0.5);
      const int64_t x0 = std::min<int64_t>(static_cast<int64_t>(fx), img.w - 1);
      const int64_t x1 = std::min<int64_t>(x0 + 1, img.w - 1);
      const double wx = fx - static_cast<double>(x0);
      for (int64_t ch = 0; ch < img.c; ++ch) {
        const double v =
            (1 - wy) * ((1 - wx) * img.at(y0, x0, ch) + wx * img.at(y0, x1, ch)) +
            wy * ((1 - wx) * img.at(y1, x0, ch) + wx * img.at(y1, x1, ch));
        out.at(y, x, ch) = static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
      }
    }
  }
  return out;
}

ImageU8 crop(const ImageU8& img, int64_t y0, int64_t x0, int64_t h, int64_t w) {
  if (y0 < 0 || x0 < 0 || y0 + h > img.h || x0 + w > img.w)
    throw DomainError("crop window out of bounds");
  ImageU8 out(h, w, img.c);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t ch = 0; ch < img.c; ++ch)
        out.at(y, x, ch) = img.at(y0 + y, x0 + x, ch);
  return out;
}

}  // namespace numvae
