#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "numvae/tensor.hpp"

namespace numvae {

// 8-bit RGB image, row-major HWC. This is the interchange type between
// the scene generator, the datasets on disk, and the float tensors the
// network consumes.
struct ImageU8 {
  int64_t h = 0, w = 0, c = 3;
  std::vector<uint8_t> pixels;  // h*w*c

  ImageU8() = default;
  ImageU8(int64_t h_, int64_t w_, int64_t c_ = 3)
      : h(h_), w(w_), c(c_), pixels(static_cast<size_t>(h_ * w_ * c_), 0) {}

  uint8_t& at(int64_t y, int64_t x, int64_t ch) {
    return pixels[static_cast<size_t>((y * w + x) * c + ch)];
  }
  uint8_t at(int64_t y, int64_t x, int64_t ch) const {
    return pixels[static_cast<size_t>((y * w + x) * c + ch)];
  }
};

// PNG IO. Loading throws MissingImageError if the file does not exist
// or cannot be decoded; saving throws IoError on failure. Files store
// the usual RGB byte order.
ImageU8 load_png(const std::string& path);
void save_png(const std::string& path, const ImageU8& img);

// Bilinear resample to (out_h, out_w).
ImageU8 resize_bilinear(const ImageU8& img, int64_t out_h, int64_t out_w);

// Crop a (h, w) window whose top-left corner is (y0, x0).
ImageU8 crop(const ImageU8& img, int64_t y0, int64_t x0, int64_t h, int64_t w);

// [0,255] HWC bytes -> [0,1] CHW floats with a leading batch axis of 1,
// and back. The float path is what the encoder consumes.
template <typename T>
Tensor<T> image_to_tensor(const ImageU8& img) {
  Tensor<T> t({1, img.c, img.h, img.w});
  for (int64_t ch = 0; ch < img.c; ++ch)
    for (int64_t y = 0; y < img.h; ++y)
      for (int64_t x = 0; x < img.w; ++x)
        t.at(0, ch, y, x) = static_cast<T>(img.at(y, x, ch)) / static_cast<T>(255);
  return t;
}

template <typename T>
ImageU8 tensor_to_image(const Tensor<T>& t, int64_t batch_index = 0) {
  if (t.rank() != 4) throw ShapeError("tensor_to_image: want NCHW, got " + t.shape_str());
  ImageU8 img(t.dim(2), t.dim(3), t.dim(1));
  for (int64_t ch = 0; ch < img.c; ++ch)
    for (int64_t y = 0; y < img.h; ++y)
      for (int64_t x = 0; x < img.w; ++x) {
        double v = static_cast<double>(t.at(batch_index, ch, y, x));
        v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        img.at(y, x, ch) = static_cast<uint8_t>(v * 255.0 + 0.5);
      }
  return img;
}

// Copies one image into row `n` of a preallocated (N,C,H,W) batch.
template <typename T>
void image_into_batch(const ImageU8& img, Tensor<T>& batch, int64_t n) {
  for (int64_t ch = 0; ch < img.c; ++ch)
    for (int64_t y = 0; y < img.h; ++y)
      for (int64_t x = 0; x < img.w; ++x)
        batch.at(n, ch, y, x) =
            static_cast<T>(img.at(y, x, ch)) / static_cast<T>(255);
}

}  // namespace numvae
