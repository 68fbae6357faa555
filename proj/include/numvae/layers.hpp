#pragma once

#include <cmath>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include "numvae/gemm.hpp"
#include "numvae/tensor.hpp"
#include "numvae/util.hpp"

namespace numvae {

// Neural-net layers with explicit forward/backward passes. Activations
// are NCHW; per-image feature maps are treated as row-major (C, H*W)
// matrices so convolutions become GEMMs over im2col buffers.
//
// Determinism: within a batch, per-image work is parallel and
// independent; every cross-image reduction (weight gradients, batch-norm
// statistics) is summed sequentially in batch order, so results do not
// depend on the worker count.

template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* value = nullptr;
  Tensor<T>* grad = nullptr;  // null for buffers (running statistics)
  bool is_buffer = false;
};

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor<T> forward(const Tensor<T>& x, bool train) = 0;
  virtual Tensor<T> backward(const Tensor<T>& gy) = 0;
  virtual void collect_params(const std::string& prefix,
                              std::vector<ParamRef<T>>& out) {}
  virtual void init(Rng& rng) {}
};

namespace detail {

// cols has layout (C*k*k, oH*oW): one contiguous row per (c, ki, kj).
template <typename T>
void im2col(const T* src, int64_t C, int64_t H, int64_t W, int k, int sh,
            int sw, int pt, int pl, int64_t oH, int64_t oW, T* cols) {
  const int64_t plane = H * W;
  const int64_t out_plane = oH * oW;
  std::memset(cols, 0, sizeof(T) * static_cast<size_t>(C * k * k * out_plane));
  for (int64_t c = 0; c < C; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        T* row = cols + ((c * k + ki) * k + kj) * out_plane;
        for (int64_t oy = 0; oy < oH; ++oy) {
          const int64_t iy = oy * sh - pt + ki;
          if (iy < 0 || iy >= H) continue;
          // valid ox range where 0 <= ox*sw - pl + kj < W
          int64_t ox0 = 0;
          const int64_t off = pl - kj;
          if (off > 0) ox0 = (off + sw - 1) / sw;
          int64_t ox1 = (W - 1 + off) / sw;  // inclusive
          if (ox1 > oW - 1) ox1 = oW - 1;
          if (ox0 > ox1) continue;
          const T* s = src + c * plane + iy * W + (ox0 * sw - off);
          T* d = row + oy * oW + ox0;
          if (sw == 1) {
            std::memcpy(d, s, sizeof(T) * static_cast<size_t>(ox1 - ox0 + 1));
          } else {
            for (int64_t ox = ox0; ox <= ox1; ++ox, s += sw) *d++ = *s;
          }
        }
      }
    }
  }
}

// Scatter-add of cols (C*k*k, oH*oW) back into dst (C, H, W).
template <typename T>
void col2im(const T* cols, int64_t C, int64_t H, int64_t W, int k, int sh,
            int sw, int pt, int pl, int64_t oH, int64_t oW, T* dst) {
  const int64_t plane = H * W;
  const int64_t out_plane = oH * oW;
  for (int64_t c = 0; c < C; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const T* row = cols + ((c * k + ki) * k + kj) * out_plane;
        for (int64_t oy = 0; oy < oH; ++oy) {
          const int64_t iy = oy * sh - pt + ki;
          if (iy < 0 || iy >= H) continue;
          int64_t ox0 = 0;
          const int64_t off = pl - kj;
          if (off > 0) ox0 = (off + sw - 1) / sw;
          int64_t ox1 = (W - 1 + off) / sw;
          if (ox1 > oW - 1) ox1 = oW - 1;
          if (ox0 > ox1) continue;
          const T* s = row + oy * oW + ox0;
          T* d = dst + c * plane + iy * W + (ox0 * sw - off);
          if (sw == 1) {
            for (int64_t ox = ox0; ox <= ox1; ++ox) *d++ += *s++;
          } else {
            for (int64_t ox = ox0; ox <= ox1; ++ox, d += sw) *d += *s++;
          }
        }
      }
    }
  }
}

template <typename T>
std::vector<T>& scratch_buffer(size_t n) {
  thread_local std::vector<T> buf;
  if (buf.size() < n) buf.resize(n);
  return buf;
}

inline int64_t conv_out_size(int64_t in, int k, int s, int p_lo, int p_hi) {
  return (in + p_lo + p_hi - k) / s + 1;
}

}  // namespace detail

// 2-D convolution. Weight layout (in_ch*k*k, out_ch), matching im2col
// row order (c, ki, kj). Padding may be asymmetric: stride-1 kernel-4
// blocks use (1,2) padding to preserve spatial size.
template <typename T>
class Conv2d : public Layer<T> {
 public:
  Conv2d(int64_t in_ch, int64_t out_ch, int k, int stride, int pad_lo,
         int pad_hi)
      : in_ch_(in_ch), out_ch_(out_ch), k_(k), stride_(stride), pad_lo_(pad_lo),
        pad_hi_(pad_hi), weight_({in_ch * k * k, out_ch}), bias_({out_ch}),
        gw_({in_ch * k * k, out_ch}), gb_({out_ch}) {}

  void init(Rng& rng) override {
    const double bound = std::sqrt(1.0 / static_cast<double>(in_ch_ * k_ * k_));
    for (int64_t i = 0; i < weight_.numel(); ++i)
      weight_[i] = static_cast<T>(rng.uniform(-bound, bound));
    for (int64_t i = 0; i < bias_.numel(); ++i)
      bias_[i] = static_cast<T>(rng.uniform(-bound, bound));
  }

  std::vector<int64_t> out_shape(const std::vector<int64_t>& in) const {
    return {in[0], out_ch_,
            detail::conv_out_size(in[2], k_, stride_, pad_lo_, pad_hi_),
            detail::conv_out_size(in[3], k_, stride_, pad_lo_, pad_hi_)};
  }

  Tensor<T> forward(const Tensor<T>& x, bool train) override {
    if (x.rank() != 4 || x.dim(1) != in_ch_)
      throw ShapeError("Conv2d: bad input " + x.shape_str());
    const auto os = out_shape(x.shape());
    Tensor<T> y(os);
    const int64_t N = x.dim(0), H = x.dim(2), W = x.dim(3);
    const int64_t oH = os[2], oW = os[3];
    const int64_t ckk = in_ch_ * k_ * k_;
    parallel_for(N, [&](int64_t n) {
      auto& cols = detail::scratch_buffer<T>(static_cast<size_t>(ckk * oH * oW));
      detail::im2col(x.data() + n * in_ch_ * H * W, in_ch_, H, W, k_, stride_,
                     stride_, pad_lo_, pad_lo_, oH, oW, cols.data());
      T* out = y.data() + n * out_ch_ * oH * oW;
      // y (out_ch, oHW) = W^T (out_ch, ckk) * cols (ckk, oHW)
      matmul_tA(out, weight_.data(), cols.data(), out_ch_, ckk, oH * oW);
      for (int64_t co = 0; co < out_ch_; ++co) {
        const T b = bias_[co];
        T* p = out + co * oH * oW;
        for (int64_t i = 0; i < oH * oW; ++i) p[i] += b;
      }
    });
    if (train) x_cache_ = x;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    const Tensor<T>& x = x_cache_;
    const int64_t N = x.dim(0), H = x.dim(2), W = x.dim(3);
    const int64_t oH = gy.dim(2), oW = gy.dim(3);
    const int64_t ckk = in_ch_ * k_ * k_;
    Tensor<T> gx(x.shape());
    // Per-image weight/bias gradients land in their own slots and are
    // reduced in batch order afterwards.
    Tensor<T> gw_n({N, ckk * out_ch_});
    Tensor<T> gb_n({N, out_ch_});
    parallel_for(N, [&](int64_t n) {
      auto& buf = detail::scratch_buffer<T>(static_cast<size_t>(2 * ckk * oH * oW));
      T* cols = buf.data();
      T* dcols = buf.data() + ckk * oH * oW;
      detail::im2col(x.data() + n * in_ch_ * H * W, in_ch_, H, W, k_, stride_,
                     stride_, pad_lo_, pad_lo_, oH, oW, cols);
      const T* dy = gy.data() + n * out_ch_ * oH * oW;
      // dW (ckk, out_ch) = cols (ckk, oHW) * dy^T (oHW, out_ch)
      matmul_tB(gw_n.data() + n * ckk * out_ch_, cols, dy, ckk, oH * oW, out_ch_);
      // dcols (ckk, oHW) = W (ckk, out_ch) * dy (out_ch, oHW)
      matmul(dcols, weight_.data(), dy, ckk, out_ch_, oH * oW);
      T* dx = gx.data() + n * in_ch_ * H * W;
      detail::col2im(dcols, in_ch_, H, W, k_, stride_, stride_, pad_lo_,
                     pad_lo_, oH, oW, dx);
      T* db = gb_n.data() + n * out_ch_;
      for (int64_t co = 0; co < out_ch_; ++co) {
        T s = 0;
        const T* p = dy + co * oH * oW;
        for (int64_t i = 0; i < oH * oW; ++i) s += p[i];
        db[co] = s;
      }
    });
    for (int64_t n = 0; n < N; ++n) {
      const T* gw_src = gw_n.data() + n * ckk * out_ch_;
      for (int64_t i = 0; i < ckk * out_ch_; ++i) gw_[i] += gw_src[i];
      const T* gb_src = gb_n.data() + n * out_ch_;
      for (int64_t i = 0; i < out_ch_; ++i) gb_[i] += gb_src[i];
    }
    return gx;
  }

  void collect_params(const std::string& prefix,
                      std::vector<ParamRef<T>>& out) override {
    out.push_back({prefix + ".weight", &weight_, &gw_, false});
    out.push_back({prefix + ".bias", &bias_, &gb_, false});
  }

  int64_t in_ch() const { return in_ch_; }
  int64_t out_ch() const { return out_ch_; }
  int kernel() const { return k_; }

 private:
  int64_t in_ch_, out_ch_;
  int k_, stride_, pad_lo_, pad_hi_;
  Tensor<T> weight_, bias_, gw_, gb_;
  Tensor<T> x_cache_;
};

// Transposed convolution; forward is the data-gradient of the matching
// convolution. Weight layout (out_ch*k*k, in_ch).
template <typename T>
class ConvTranspose2d : public Layer<T> {
 public:
  ConvTranspose2d(int64_t in_ch, int64_t out_ch, int k, int stride, int pad,
                  int out_pad)
      : in_ch_(in_ch), out_ch_(out_ch), k_(k), stride_(stride), pad_(pad),
        out_pad_(out_pad), weight_({out_ch * k * k, in_ch}), bias_({out_ch}),
        gw_({out_ch * k * k, in_ch}), gb_({out_ch}) {}

  void init(Rng& rng) override {
    // fan-in per output element = in_ch * k*k / stride^2 on average;
    // plain in_ch*k*k scaling is used for simplicity.
    const double bound = std::sqrt(1.0 / static_cast<double>(in_ch_ * k_ * k_));
    for (int64_t i = 0; i < weight_.numel(); ++i)
      weight_[i] = static_cast<T>(rng.uniform(-bound, bound));
    for (int64_t i = 0; i < bias_.numel(); ++i)
      bias_[i] = static_cast<T>(rng.uniform(-bound, bound));
  }

  std::vector<int64_t> out_shape(const std::vector<int64_t>& in) const {
    const int64_t oH = stride_ * (in[2] - 1) + k_ - 2 * pad_ + out_pad_;
    const int64_t oW = stride_ * (in[3] - 1) + k_ - 2 * pad_ + out_pad_;
    return {in[0], out_ch_, oH, oW};
  }

  Tensor<T> forward(const Tensor<T>& x, bool train) override {
    if (x.rank() != 4 || x.dim(1) != in_ch_)
      throw ShapeError("ConvTranspose2d: bad input " + x.shape_str());
    const auto os = out_shape(x.shape());
    Tensor<T> y(os);
    const int64_t N = x.dim(0), iH = x.dim(2), iW = x.dim(3);
    const int64_t oH = os[2], oW = os[3];
    const int64_t ckk = out_ch_ * k_ * k_;
    parallel_for(N, [&](int64_t n) {
      auto& cols = detail::scratch_buffer<T>(static_cast<size_t>(ckk * iH * iW));
      // cols (out_ch*k*k, iHW) = W (ckk, in_ch) * x (in_ch, iHW)
      matmul(cols.data(), weight_.data(), x.data() + n * in_ch_ * iH * iW, ckk,
             in_ch_, iH * iW);
      T* out = y.data() + n * out_ch_ * oH * oW;
      std::memset(out, 0, sizeof(T) * static_cast<size_t>(out_ch_ * oH * oW));
      detail::col2im(cols.data(), out_ch_, oH, oW, k_, stride_, stride_, pad_,
                     pad_, iH, iW, out);
      for (int64_t co = 0; co < out_ch_; ++co) {
        const T b = bias_[co];
        T* p = out + co * oH * oW;
        for (int64_t i = 0; i < oH * oW; ++i) p[i] += b;
      }
    });
    if (train) x_cache_ = x;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    const Tensor<T>& x = x_cache_;
    const int64_t N = x.dim(0), iH = x.dim(2), iW = x.dim(3);
    const int64_t oH = gy.dim(2), oW = gy.dim(3);
    const int64_t ckk = out_ch_ * k_ * k_;
    Tensor<T> gx(x.shape());
    Tensor<T> gw_n({N, ckk * in_ch_});
    Tensor<T> gb_n({N, out_ch_});
    parallel_for(N, [&](int64_t n) {
      auto& buf = detail::scratch_buffer<T>(static_cast<size_t>(ckk * iH * iW));
      T* dcols = buf.data();
      detail::im2col(gy.data() + n * out_ch_ * oH * oW, out_ch_, oH, oW, k_,
                     stride_, stride_, pad_, pad_, iH, iW, dcols);
      // dx (in_ch, iHW) = W^T (in_ch, ckk) * dcols (ckk, iHW)
      matmul_tA(gx.data() + n * in_ch_ * iH * iW, weight_.data(), dcols, in_ch_,
                ckk, iH * iW);
      // dW (ckk, in_ch) = dcols (ckk, iHW) * x^T (iHW, in_ch)
      matmul_tB(gw_n.data() + n * ckk * in_ch_, dcols,
                x.data() + n * in_ch_ * iH * iW, ckk, iH * iW, in_ch_);
      const T* dy = gy.data() + n * out_ch_ * oH * oW;
      T* db = gb_n.data() + n * out_ch_;
      for (int64_t co = 0; co < out_ch_; ++co) {
        T s = 0;
        const T* p = dy + co * oH * oW;
        for (int64_t i = 0; i < oH * oW; ++i) s += p[i];
        db[co] = s;
      }
    });
    for (int64_t n = 0; n < N; ++n) {
      const T* gw_src = gw_n.data() + n * ckk * in_ch_;
      for (int64_t i = 0; i < ckk * in_ch_; ++i) gw_[i] += gw_src[i];
      const T* gb_src = gb_n.data() + n * out_ch_;
      for (int64_t i = 0; i < out_ch_; ++i) gb_[i] += gb_src[i];
    }
    return gx;
  }

  void collect_params(const std::string& prefix,
                      std::vector<ParamRef<T>>& out) override {
    out.push_back({prefix + ".weight", &weight_, &gw_, false});
    out.push_back({prefix + ".bias", &bias_, &gb_, false});
  }

 private:
  int64_t in_ch_, out_ch_;
  int k_, stride_, pad_, out_pad_;
  Tensor<T> weight_, bias_, gw_, gb_;
  Tensor<T> x_cache_;
};

// Fully connected layer over (N, in) activations. Weight layout
// (in, out).
template <typename T>
class Linear : public Layer<T> {
 public:
  Linear(int64_t in, int64_t out)
      : in_(in), out_(out), weight_({in, out}), bias_({out}), gw_({in, out}),
        gb_({out}) {}

  void init(Rng& rng) override {
    const double bound = std::sqrt(1.0 / static_cast<double>(in_));
    for (int64_t i = 0; i < weight_.numel(); ++i)
      weight_[i] = static_cast<T>(rng.uniform(-bound, bound));
    for (int64_t i = 0; i < bias_.numel(); ++i)
      bias_[i] = static_cast<T>(rng.uniform(-bound, bound));
  }

  Tensor<T> forward(const Tensor<T>& x, bool train) override {
    if (x.rank() != 2 || x.dim(1) != in_)
      throw ShapeError("Linear: bad input " + x.shape_str());
    const int64_t N = x.dim(0);
    Tensor<T> y({N, out_});
    matmul(y.data(), x.data(), weight_.data(), N, in_, out_);
    for (int64_t n = 0; n < N; ++n) {
      T* p = y.data() + n * out_;
      for (int64_t j = 0; j < out_; ++j) p[j] += bias_[j];
    }
    if (train) x_cache_ = x;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    const Tensor<T>& x = x_cache_;
    const int64_t N = x.dim(0);
    // dW = x^T * gy ; contraction over the batch is a fixed-order sum.
    matmul_tA(gw_.data(), x.data(), gy.data(), in_, N, out_, /*accumulate=*/true);
    for (int64_t n = 0; n < N; ++n) {
      const T* p = gy.data() + n * out_;
      for (int64_t j = 0; j < out_; ++j) gb_[j] += p[j];
    }
    Tensor<T> gx({N, in_});
    matmul_tB(gx.data(), gy.data(), weight_.data(), N, out_, in_);
    return gx;
  }

  void collect_params(const std::string& prefix,
                      std::vector<ParamRef<T>>& out) override {
    out.push_back({prefix + ".weight", &weight_, &gw_, false});
    out.push_back({prefix + ".bias", &bias_, &gb_, false});
  }

  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias() { return bias_; }
  int64_t in_features() const { return in_; }
  int64_t out_features() const { return out_; }

 private:
  int64_t in_, out_;
  Tensor<T> weight_, bias_, gw_, gb_;
  Tensor<T> x_cache_;
};

// Batch normalization over (N, H, W) per channel. Running statistics
// accumulate the biased batch variance; eval mode uses them.
template <typename T>
class BatchNorm2d : public Layer<T> {
 public:
  explicit BatchNorm2d(int64_t channels, T momentum = T(0.1), T eps = T(1e-5))
      : c_(channels), momentum_(momentum), eps_(eps), gamma_({channels}),
        beta_({channels}), ggamma_({channels}), gbeta_({channels}),
        running_mean_({channels}), running_var_({channels}) {
    gamma_.fill(T(1));
    running_var_.fill(T(1));
  }

  Tensor<T> forward(const Tensor<T>& x, bool train) override {
    if (x.rank() != 4 || x.dim(1) != c_)
      throw ShapeError("BatchNorm2d: bad input " + x.shape_str());
    const int64_t N = x.dim(0), H = x.dim(2), W = x.dim(3);
    const int64_t plane = H * W;
    Tensor<T> y(x.shape());
    if (train) {
      xhat_ = Tensor<T>(x.shape());
      invstd_ = Tensor<T>({c_});
      parallel_for(c_, [&](int64_t c) {
        T mean = 0;
        for (int64_t n = 0; n < N; ++n) {
          const T* p = x.data() + (n * c_ + c) * plane;
          for (int64_t i = 0; i < plane; ++i) mean += p[i];
        }
        const T m = static_cast<T>(N * plane);
        mean /= m;
        T var = 0;
        for (int64_t n = 0; n < N; ++n) {
          const T* p = x.data() + (n * c_ + c) * plane;
          for (int64_t i = 0; i < plane; ++i) {
            const T d = p[i] - mean;
            var += d * d;
          }
        }
        var /= m;
        const T inv = T(1) / std::sqrt(var + eps_);
        invstd_[c] = inv;
        const T g = gamma_[c], b = beta_[c];
        for (int64_t n = 0; n < N; ++n) {
          const T* p = x.data() + (n * c_ + c) * plane;
          T* xh = xhat_.data() + (n * c_ + c) * plane;
          T* q = y.data() + (n * c_ + c) * plane;
          for (int64_t i = 0; i < plane; ++i) {
            xh[i] = (p[i] - mean) * inv;
            q[i] = g * xh[i] + b;
          }
        }
        running_mean_[c] = (T(1) - momentum_) * running_mean_[c] + momentum_ * mean;
        running_var_[c] = (T(1) - momentum_) * running_var_[c] + momentum_ * var;
      });
    } else {
      parallel_for(c_, [&](int64_t c) {
        const T inv = T(1) / std::sqrt(running_var_[c] + eps_);
        const T g = gamma_[c], b = beta_[c], mean = running_mean_[c];
        for (int64_t n = 0; n < N; ++n) {
          const T* p = x.data() + (n * c_ + c) * plane;
          T* q = y.data() + (n * c_ + c) * plane;
          for (int64_t i = 0; i < plane; ++i) q[i] = g * (p[i] - mean) * inv + b;
        }
      });
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    const int64_t N = gy.dim(0), H = gy.dim(2), W = gy.dim(3);
    const int64_t plane = H * W;
    const T m = static_cast<T>(N * plane);
    Tensor<T> gx(gy.shape());
    parallel_for(c_, [&](int64_t c) {
      T sum_dy = 0, sum_dy_xhat = 0;
      for (int64_t n = 0; n < N; ++n) {
        const T* dy = gy.data() + (n * c_ + c) * plane;
        const T* xh = xhat_.data() + (n * c_ + c) * plane;
        for (int64_t i = 0; i < plane; ++i) {
          sum_dy += dy[i];
          sum_dy_xhat += dy[i] * xh[i];
        }
      }
      ggamma_[c] += sum_dy_xhat;
      gbeta_[c] += sum_dy;
      const T scale = gamma_[c] * invstd_[c] / m;
      for (int64_t n = 0; n < N; ++n) {
        const T* dy = gy.data() + (n * c_ + c) * plane;
        const T* xh = xhat_.data() + (n * c_ + c) * plane;
        T* dx = gx.data() + (n * c_ + c) * plane;
        for (int64_t i = 0; i < plane; ++i)
          dx[i] = scale * (m * dy[i] - sum_dy - xh[i] * sum_dy_xhat);
      }
    });
    return gx;
  }

  void collect_params(const std::string& prefix,
                      std::vector<ParamRef<T>>& out) override {
    out.push_back({prefix + ".gamma", &gamma_, &ggamma_, false});
    out.push_back({prefix + ".beta", &beta_, &gbeta_, false});
    out.push_back({prefix + ".running_mean", &running_mean_, nullptr, true});
    out.push_back({prefix + ".running_var", &running_var_, nullptr, true});
  }

 private:
  int64_t c_;
  T momentum_, eps_;
  Tensor<T> gamma_, beta_, ggamma_, gbeta_;
  Tensor<T> running_mean_, running_var_;
  Tensor<T> xhat_, invstd_;
};

template <typename T>
class LeakyRelu : public Layer<T> {
 public:
  explicit LeakyRelu(T slope = T(0.01)) : slope_(slope) {}

  Tensor<T> forward(const Tensor<T>& x, bool train) override {
    Tensor<T> y(x.shape());
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : slope_ * x[i];
    if (train) y_cache_ = y;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    Tensor<T> gx(gy.shape());
    const int64_t n = gy.numel();
    for (int64_t i = 0; i < n; ++i)
      gx[i] = y_cache_[i] > T(0) ? gy[i] : slope_ * gy[i];
    return gx;
  }

 private:
  T slope_;
  Tensor<T> y_cache_;
};

template <typename T>
class Relu : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, bool train) override {
    Tensor<T> y(x.shape());
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
    if (train) y_cache_ = y;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    Tensor<T> gx(gy.shape());
    const int64_t n = gy.numel();
    for (int64_t i = 0; i < n; ++i) gx[i] = y_cache_[i] > T(0) ? gy[i] : T(0);
    return gx;
  }

 private:
  Tensor<T> y_cache_;
};

template <typename T>
class Sigmoid : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, bool train) override {
    Tensor<T> y(x.shape());
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) y[i] = T(1) / (T(1) + std::exp(-x[i]));
    if (train) y_cache_ = y;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    Tensor<T> gx(gy.shape());
    const int64_t n = gy.numel();
    for (int64_t i = 0; i < n; ++i)
      gx[i] = gy[i] * y_cache_[i] * (T(1) - y_cache_[i]);
    return gx;
  }

 private:
  Tensor<T> y_cache_;
};

// softplus(x) = log(1 + e^x), evaluated stably; derivative is the
// logistic sigmoid.
template <typename T>
class Softplus : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, bool train) override {
    Tensor<T> y(x.shape());
    if (train) sig_cache_ = Tensor<T>(x.shape());
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) {
      const T v = x[i];
      y[i] = std::max(v, T(0)) + std::log1p(std::exp(-std::abs(v)));
      if (train) sig_cache_[i] = T(1) / (T(1) + std::exp(-v));
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    Tensor<T> gx(gy.shape());
    const int64_t n = gy.numel();
    for (int64_t i = 0; i < n; ++i) gx[i] = gy[i] * sig_cache_[i];
    return gx;
  }

 private:
  Tensor<T> sig_cache_;
};

// Ordered layer pipeline with named parameter collection.
template <typename T>
class Stack {
 public:
  void add(std::string name, std::unique_ptr<Layer<T>> layer) {
    names_.push_back(std::move(name));
    layers_.push_back(std::move(layer));
  }

  Tensor<T> forward(Tensor<T> x, bool train) {
    for (auto& l : layers_) x = l->forward(x, train);
    return x;
  }

  Tensor<T> backward(Tensor<T> gy) {
    for (size_t i = layers_.size(); i-- > 0;) gy = layers_[i]->backward(gy);
    return gy;
  }

  void collect_params(const std::string& prefix,
                      std::vector<ParamRef<T>>& out) {
    for (size_t i = 0; i < layers_.size(); ++i)
      layers_[i]->collect_params(prefix + "." + names_[i], out);
  }

  void init(Rng& rng) {
    for (auto& l : layers_) l->init(rng);
  }

  size_t size() const { return layers_.size(); }
  Layer<T>& layer(size_t i) { return *layers_[i]; }
  const std::string& name(size_t i) const { return names_[i]; }

 private:
  std::vector<std::string> names_;
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

// Plain SGD with classical momentum.
template <typename T>
class SgdMomentum {
 public:
  SgdMomentum(std::vector<ParamRef<T>> params, T momentum)
      : params_(std::move(params)), momentum_(momentum) {
    for (auto& p : params_)
      if (!p.is_buffer) velocity_.emplace_back(Tensor<T>(p.value->shape()));
  }

  void zero_grads() {
    for (auto& p : params_)
      if (p.grad) p.grad->fill(T(0));
  }

  void step(T lr) {
    size_t vi = 0;
    for (auto& p : params_) {
      if (p.is_buffer) continue;
      Tensor<T>& v = velocity_[vi++];
      Tensor<T>& w = *p.value;
      const Tensor<T>& g = *p.grad;
      const int64_t n = w.numel();
      for (int64_t i = 0; i < n; ++i) {
        v[i] = momentum_ * v[i] + g[i];
        w[i] -= lr * v[i];
      }
    }
  }

 private:
  std::vector<ParamRef<T>> params_;
  std::vector<Tensor<T>> velocity_;
  T momentum_;
};

}  // namespace numvae
