#include "idf/nn.hpp"

#include <algorithm>
#include <cmath>

#include "idf/error.hpp"
#include "idf/simd/kernels.hpp"

namespace idf::nn {

namespace {

constexpr std::size_t kKernel = 3;
constexpr std::size_t kTaps = kKernel * kKernel;
// Output pixels processed per im2col chunk; bounds the scratch buffer.
constexpr std::size_t kChunkPixels = 4096;

struct ConvGeometry {
  std::size_t in_c, in_h, in_w, out_h, out_w, stride;
  std::size_t out_pixels() const { return out_h * out_w; }
};

ConvGeometry geometry(const ConvParams& p, const Tensor& x, std::size_t stride) {
  require(x.rank() == 3, ErrorKind::Dimension, "conv input must be [C, H, W], got " + shape_string(x.shape()));
  require(x.dim(0) == p.in_channels(), ErrorKind::Dimension,
          "conv expects " + std::to_string(p.in_channels()) + " input channels, got " + std::to_string(x.dim(0)));
  require(stride >= 1, ErrorKind::Parameter, "conv stride must be positive");
  return {x.dim(0), x.dim(1), x.dim(2), conv_output_size(x.dim(1), stride), conv_output_size(x.dim(2), stride),
          stride};
}

// Output columns ox in [lo, hi) read input column ox * stride + kx - 1 inside
// the image.
std::pair<std::size_t, std::size_t> valid_columns(const ConvGeometry& g, std::size_t kx) {
  const std::size_t lo = kx == 0 ? 1 : 0;
  const auto last = static_cast<std::ptrdiff_t>(g.in_w) - static_cast<std::ptrdiff_t>(kx);
  if (last < 0) return {0, 0};
  const std::size_t hi = std::min(g.out_w, static_cast<std::size_t>(last) / g.stride + 1);
  return {std::min(lo, hi), hi};
}

// Calls f(q, oy, ox0, len) for each run of output pixels of [p0, p0 + n)
// lying on one output row.
template <typename F>
void for_each_row_run(const ConvGeometry& g, std::size_t p0, std::size_t n, F&& f) {
  std::size_t q = 0;
  while (q < n) {
    const std::size_t op = p0 + q;
    const std::size_t oy = op / g.out_w;
    const std::size_t ox0 = op % g.out_w;
    const std::size_t len = std::min(g.out_w - ox0, n - q);
    f(q, oy, ox0, len);
    q += len;
  }
}

// col[k, q] for output pixels [p0, p0 + n), k = (c * 3 + ky) * 3 + kx.
void im2col(const ConvGeometry& g, const double* x, std::size_t p0, std::size_t n, double* col) {
  for (std::size_t c = 0; c < g.in_c; ++c) {
    const double* plane = x + c * g.in_h * g.in_w;
    for (std::size_t ky = 0; ky < kKernel; ++ky) {
      for (std::size_t kx = 0; kx < kKernel; ++kx) {
        double* row = col + ((c * kKernel + ky) * kKernel + kx) * n;
        const auto [lo, hi] = valid_columns(g, kx);
        for_each_row_run(g, p0, n, [&](std::size_t q, std::size_t oy, std::size_t ox0, std::size_t len) {
          double* dst = row + q;
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - 1;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) {
            std::fill_n(dst, len, 0.0);
            return;
          }
          const double* src = plane + static_cast<std::size_t>(iy) * g.in_w;
          const std::size_t a = std::clamp(lo, ox0, ox0 + len);
          const std::size_t b = std::clamp(hi, a, ox0 + len);
          std::fill(dst, dst + (a - ox0), 0.0);
          for (std::size_t ox = a; ox < b; ++ox) dst[ox - ox0] = src[ox * g.stride + kx - 1];
          std::fill(dst + (b - ox0), dst + len, 0.0);
        });
      }
    }
  }
}

void col2im_add(const ConvGeometry& g, const double* col, std::size_t p0, std::size_t n, double* dx) {
  for (std::size_t c = 0; c < g.in_c; ++c) {
    double* plane = dx + c * g.in_h * g.in_w;
    for (std::size_t ky = 0; ky < kKernel; ++ky) {
      for (std::size_t kx = 0; kx < kKernel; ++kx) {
        const double* row = col + ((c * kKernel + ky) * kKernel + kx) * n;
        const auto [lo, hi] = valid_columns(g, kx);
        for_each_row_run(g, p0, n, [&](std::size_t q, std::size_t oy, std::size_t ox0, std::size_t len) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - 1;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) return;
          double* dst = plane + static_cast<std::size_t>(iy) * g.in_w;
          const std::size_t a = std::max(lo, ox0), b = std::min(hi, ox0 + len);
          for (std::size_t ox = a; ox < b; ++ox) dst[ox * g.stride + kx - 1] += row[q + ox - ox0];
        });
      }
    }
  }
}

void transpose(const double* src, std::size_t rows, std::size_t cols, std::size_t ld_src, double* dst) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * ld_src + c];
}

}  // namespace

void init_normal(Tensor& t, double stddev, Rng& rng) {
  if (stddev == 0.0) {
    t.fill(0.0);
    return;
  }
  std::normal_distribution<double> d(0.0, stddev);
  for (double& v : t.values()) v = d(rng);
}

void ConvParams::visit(const std::string& prefix, const TensorVisitor& f) {
  f(prefix + ".weight", weight);
  f(prefix + ".bias", bias);
}
void ConvParams::visit(const std::string& prefix, const ConstTensorVisitor& f) const {
  f(prefix + ".weight", weight);
  f(prefix + ".bias", bias);
}
void LinearParams::visit(const std::string& prefix, const TensorVisitor& f) {
  f(prefix + ".weight", weight);
  f(prefix + ".bias", bias);
}
void LinearParams::visit(const std::string& prefix, const ConstTensorVisitor& f) const {
  f(prefix + ".weight", weight);
  f(prefix + ".bias", bias);
}
void BatchNormParams::visit(const std::string& prefix, const TensorVisitor& f) {
  f(prefix + ".gamma", gamma);
  f(prefix + ".beta", beta);
}
void BatchNormParams::visit(const std::string& prefix, const ConstTensorVisitor& f) const {
  f(prefix + ".gamma", gamma);
  f(prefix + ".beta", beta);
}
void BatchNormStats::visit(const std::string& prefix, const TensorVisitor& f) {
  f(prefix + ".running_mean", running_mean);
  f(prefix + ".running_var", running_var);
}
void BatchNormStats::visit(const std::string& prefix, const ConstTensorVisitor& f) const {
  f(prefix + ".running_mean", running_mean);
  f(prefix + ".running_var", running_var);
}

ConvParams make_conv(std::size_t in, std::size_t out, double weight_std, Rng& rng) {
  ConvParams p{Tensor(Shape{out, in, kKernel, kKernel}), Tensor(Shape{out})};
  init_normal(p.weight, weight_std, rng);
  return p;
}

LinearParams make_linear(std::size_t in, std::size_t out, double weight_std, Rng& rng) {
  LinearParams p{Tensor(Shape{out, in}), Tensor(Shape{out})};
  init_normal(p.weight, weight_std, rng);
  return p;
}

BatchNormParams make_batchnorm(std::size_t features) {
  return {Tensor(Shape{features}, 1.0), Tensor(Shape{features}, 0.0)};
}

BatchNormStats make_batchnorm_stats(std::size_t features) {
  return {Tensor(Shape{features}, 0.0), Tensor(Shape{features}, 1.0)};
}

std::size_t conv_output_size(std::size_t in, std::size_t stride) { return (in + stride - 1) / stride; }

Tensor conv2d_forward(const ConvParams& p, const Tensor& x, std::size_t stride) {
  const ConvGeometry g = geometry(p, x, stride);
  const std::size_t out_c = p.out_channels();
  const std::size_t k = g.in_c * kTaps;
  const std::size_t pixels = g.out_pixels();
  Tensor y(Shape{out_c, g.out_h, g.out_w});
  for (std::size_t o = 0; o < out_c; ++o) std::fill_n(y.data() + o * pixels, pixels, p.bias[o]);

  std::vector<double> col;
  for (std::size_t p0 = 0; p0 < pixels; p0 += kChunkPixels) {
    const std::size_t n = std::min(kChunkPixels, pixels - p0);
    col.resize(k * n);
    im2col(g, x.data(), p0, n, col.data());
    simd::gemm(out_c, n, k, p.weight.data(), k, col.data(), n, y.data() + p0, pixels);
  }
  return y;
}

Tensor conv2d_backward(const ConvParams& p, const Tensor& x, const Tensor& dy, std::size_t stride, ConvParams& grad,
                       bool want_input_grad) {
  const ConvGeometry g = geometry(p, x, stride);
  const std::size_t out_c = p.out_channels();
  const std::size_t k = g.in_c * kTaps;
  const std::size_t pixels = g.out_pixels();
  require(dy.rank() == 3 && dy.dim(0) == out_c && dy.dim(1) == g.out_h && dy.dim(2) == g.out_w,
          ErrorKind::Dimension, "conv backward: upstream gradient shape " + shape_string(dy.shape()));
  require_same_shape(grad.weight, p.weight, "conv weight gradient");

  for (std::size_t o = 0; o < out_c; ++o) {
    const double* row = dy.data() + o * pixels;
    double s = 0.0;
    for (std::size_t q = 0; q < pixels; ++q) s += row[q];
    grad.bias[o] += s;
  }

  Tensor dx;
  if (want_input_grad) dx = Tensor(x.shape());
  std::vector<double> wt(k * out_c);  // W^T: [k, out]
  transpose(p.weight.data(), out_c, k, k, wt.data());
  std::vector<double> dwt(k * out_c, 0.0);

  std::vector<double> col, dyt, dcol;
  for (std::size_t p0 = 0; p0 < pixels; p0 += kChunkPixels) {
    const std::size_t n = std::min(kChunkPixels, pixels - p0);
    col.resize(k * n);
    im2col(g, x.data(), p0, n, col.data());
    dyt.resize(n * out_c);
    transpose(dy.data() + p0, out_c, n, pixels, dyt.data());
    // dW^T[k, out] += col[k, n] * dy^T[n, out]
    simd::gemm(k, out_c, n, col.data(), n, dyt.data(), out_c, dwt.data(), out_c);
    if (want_input_grad) {
      dcol.assign(k * n, 0.0);
      // dcol[k, n] = W^T[k, out] * dy[out, n]
      simd::gemm(k, n, out_c, wt.data(), out_c, dy.data() + p0, pixels, dcol.data(), n);
      col2im_add(g, dcol.data(), p0, n, dx.data());
    }
  }
  for (std::size_t o = 0; o < out_c; ++o)
    for (std::size_t j = 0; j < k; ++j) grad.weight[o * k + j] += dwt[j * out_c + o];
  return dx;
}

namespace {

std::pair<std::size_t, std::size_t> batch_dims(const Tensor& x, std::size_t features, const char* what) {
  if (x.rank() == 1) {
    require(x.dim(0) == features, ErrorKind::Dimension,
            std::string(what) + ": expected " + std::to_string(features) + " features, got " + std::to_string(x.dim(0)));
    return {1, features};
  }
  require(x.rank() == 2 && x.dim(1) == features, ErrorKind::Dimension,
          std::string(what) + ": expected [B, " + std::to_string(features) + "], got " + shape_string(x.shape()));
  return {x.dim(0), features};
}

}  // namespace

Tensor linear_forward(const LinearParams& p, const Tensor& x) {
  const auto [batch, in] = batch_dims(x, p.in_features(), "linear");
  const std::size_t out = p.out_features();
  Tensor y(x.rank() == 1 ? Shape{out} : Shape{batch, out});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t o = 0; o < out; ++o)
      y[b * out + o] = p.bias[o] + simd::dot(p.weight.data() + o * in, x.data() + b * in, in);
  return y;
}

Tensor linear_backward(const LinearParams& p, const Tensor& x, const Tensor& dy, LinearParams& grad) {
  const auto [batch, in] = batch_dims(x, p.in_features(), "linear backward");
  const std::size_t out = p.out_features();
  require(dy.size() == batch * out, ErrorKind::Dimension, "linear backward: upstream gradient size mismatch");
  Tensor dx(x.shape());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t o = 0; o < out; ++o) {
      const double g = dy[b * out + o];
      if (g == 0.0) continue;
      grad.bias[o] += g;
      simd::axpy(g, x.data() + b * in, grad.weight.data() + o * in, in);
      simd::axpy(g, p.weight.data() + o * in, dx.data() + b * in, in);
    }
  }
  return dx;
}

void relu_inplace(Tensor& x) {
  for (double& v : x.values()) v = v > 0.0 ? v : 0.0;
}

void relu_backward_inplace(const Tensor& y, Tensor& dy) {
  require_same_shape(y, dy, "relu backward");
  for (std::size_t i = 0; i < y.size(); ++i)
    if (!(y[i] > 0.0)) dy[i] = 0.0;
}

void tanh_inplace(Tensor& x) {
  for (double& v : x.values()) v = std::tanh(v);
}

void tanh_backward_inplace(const Tensor& y, Tensor& dy) {
  require_same_shape(y, dy, "tanh backward");
  for (std::size_t i = 0; i < y.size(); ++i) dy[i] *= 1.0 - y[i] * y[i];
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require(a.rank() == 3 && b.rank() == 3 && a.dim(1) == b.dim(1) && a.dim(2) == b.dim(2), ErrorKind::Dimension,
          "channel concat of " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
  Tensor out(Shape{a.dim(0) + b.dim(0), a.dim(1), a.dim(2)});
  std::copy(a.values().begin(), a.values().end(), out.data());
  std::copy(b.values().begin(), b.values().end(), out.data() + a.size());
  return out;
}

void split_channels(const Tensor& both, std::size_t first_channels, Tensor& a, Tensor& b) {
  require(both.rank() == 3 && first_channels <= both.dim(0), ErrorKind::Dimension, "channel split out of range");
  const std::size_t plane = both.dim(1) * both.dim(2);
  a = Tensor(Shape{first_channels, both.dim(1), both.dim(2)});
  b = Tensor(Shape{both.dim(0) - first_channels, both.dim(1), both.dim(2)});
  std::copy_n(both.data(), a.size(), a.data());
  std::copy_n(both.data() + first_channels * plane, b.size(), b.data());
}

Tensor global_average_pool(const Tensor& x) {
  require(x.rank() == 3, ErrorKind::Dimension, "pool input must be [C, H, W]");
  const std::size_t plane = x.dim(1) * x.dim(2);
  Tensor y(Shape{x.dim(0)});
  for (std::size_t c = 0; c < x.dim(0); ++c) {
    double s = 0.0;
    for (std::size_t q = 0; q < plane; ++q) s += x[c * plane + q];
    y[c] = s / static_cast<double>(plane);
  }
  return y;
}

Tensor global_average_pool_backward(const Tensor& dy, const Shape& input_shape) {
  Tensor dx(input_shape);
  const std::size_t plane = input_shape[1] * input_shape[2];
  for (std::size_t c = 0; c < input_shape[0]; ++c) std::fill_n(dx.data() + c * plane, plane, dy[c] / static_cast<double>(plane));
  return dx;
}

Tensor batchnorm_forward_train(const BatchNormParams& p, BatchNormStats& stats, const Tensor& x,
                               BatchNormCache& cache) {
  require(x.rank() == 2 && x.dim(1) == p.gamma.size(), ErrorKind::Dimension, "batch norm input shape");
  const std::size_t batch = x.dim(0);
  const std::size_t f = x.dim(1);
  require(batch >= 2, ErrorKind::Parameter, "batch norm in training mode needs a batch of at least 2");
  Tensor y(x.shape());
  cache.x_hat = Tensor(x.shape());
  cache.inv_std.assign(f, 0.0);
  for (std::size_t j = 0; j < f; ++j) {
    double mean = 0.0;
    for (std::size_t b = 0; b < batch; ++b) mean += x[b * f + j];
    mean /= static_cast<double>(batch);
    double var = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const double d = x[b * f + j] - mean;
      var += d * d;
    }
    const double biased = var / static_cast<double>(batch);
    const double inv = 1.0 / std::sqrt(biased + kBatchNormEps);
    cache.inv_std[j] = inv;
    for (std::size_t b = 0; b < batch; ++b) {
      const double xh = (x[b * f + j] - mean) * inv;
      cache.x_hat[b * f + j] = xh;
      y[b * f + j] = p.gamma[j] * xh + p.beta[j];
    }
    const double unbiased = var / static_cast<double>(batch - 1);
    stats.running_mean[j] = (1.0 - kBatchNormMomentum) * stats.running_mean[j] + kBatchNormMomentum * mean;
    stats.running_var[j] = (1.0 - kBatchNormMomentum) * stats.running_var[j] + kBatchNormMomentum * unbiased;
  }
  return y;
}

Tensor batchnorm_forward_eval(const BatchNormParams& p, const BatchNormStats& stats, const Tensor& x) {
  const std::size_t f = p.gamma.size();
  const auto [batch, features] = batch_dims(x, f, "batch norm");
  Tensor y(x.shape());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t j = 0; j < features; ++j) {
      const double inv = 1.0 / std::sqrt(stats.running_var[j] + kBatchNormEps);
      y[b * f + j] = p.gamma[j] * (x[b * f + j] - stats.running_mean[j]) * inv + p.beta[j];
    }
  return y;
}

Tensor batchnorm_backward(const BatchNormParams& p, const BatchNormCache& cache, const Tensor& dy,
                          BatchNormParams& grad) {
  require_same_shape(cache.x_hat, dy, "batch norm backward");
  const std::size_t batch = dy.dim(0);
  const std::size_t f = dy.dim(1);
  const double nb = static_cast<double>(batch);
  Tensor dx(dy.shape());
  for (std::size_t j = 0; j < f; ++j) {
    double sum_dy = 0.0;
    double sum_dy_xh = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      sum_dy += dy[b * f + j];
      sum_dy_xh += dy[b * f + j] * cache.x_hat[b * f + j];
    }
    grad.beta[j] += sum_dy;
    grad.gamma[j] += sum_dy_xh;
    const double scale = p.gamma[j] * cache.inv_std[j] / nb;
    for (std::size_t b = 0; b < batch; ++b)
      dx[b * f + j] = scale * (nb * dy[b * f + j] - sum_dy - cache.x_hat[b * f + j] * sum_dy_xh);
  }
  return dx;
}

Tensor dropout_mask(const Shape& shape, double rate, Rng& rng) {
  require(rate >= 0.0 && rate < 1.0, ErrorKind::Parameter, "dropout rate must be in [0, 1)");
  Tensor mask(shape, 1.0);
  if (rate == 0.0) return mask;
  std::bernoulli_distribution keep(1.0 - rate);
  const double scale = 1.0 / (1.0 - rate);
  for (double& v : mask.values()) v = keep(rng) ? scale : 0.0;
  return mask;
}

Tensor softmax(const Tensor& logits) {
  require(logits.rank() == 1 || logits.rank() == 2, ErrorKind::Dimension, "softmax expects [C] or [B, C]");
  const std::size_t classes = logits.shape().back();
  const std::size_t rows = logits.size() / std::max<std::size_t>(classes, 1);
  Tensor out(logits.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* z = logits.data() + r * classes;
    double* p = out.data() + r * classes;
    const double zmax = *std::max_element(z, z + classes);
    double s = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      p[c] = std::exp(z[c] - zmax);
      s += p[c];
    }
    for (std::size_t c = 0; c < classes; ++c) p[c] /= s;
  }
  return out;
}

}  // namespace idf::nn
