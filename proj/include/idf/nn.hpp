#pragma once

// Layer primitives with explicit forward/backward passes. Forward functions
// are pure given their parameters; backward functions accumulate into a
// gradient structure of the same type as the parameters.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "idf/tensor.hpp"

namespace idf {

using Rng = std::mt19937_64;

// Splitmix finalizer; derives independent stream seeds from (seed, tag).
inline std::uint64_t seed_mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
inline std::uint64_t seed_mix(std::uint64_t a, std::uint64_t b) { return seed_mix(a ^ seed_mix(b)); }

using TensorVisitor = std::function<void(const std::string& name, Tensor& t)>;
using ConstTensorVisitor = std::function<void(const std::string& name, const Tensor& t)>;

}  // namespace idf

namespace idf::nn {

void init_normal(Tensor& t, double stddev, Rng& rng);

// 3x3 convolution, zero padding 1. weight: [out, in, 3, 3], bias: [out].
struct ConvParams {
  Tensor weight;
  Tensor bias;

  std::size_t in_channels() const { return weight.dim(1); }
  std::size_t out_channels() const { return weight.dim(0); }
  void visit(const std::string& prefix, const TensorVisitor& f);
  void visit(const std::string& prefix, const ConstTensorVisitor& f) const;
};

// weight: [out, in], bias: [out].
struct LinearParams {
  Tensor weight;
  Tensor bias;

  std::size_t in_features() const { return weight.dim(1); }
  std::size_t out_features() const { return weight.dim(0); }
  void visit(const std::string& prefix, const TensorVisitor& f);
  void visit(const std::string& prefix, const ConstTensorVisitor& f) const;
};

struct BatchNormParams {
  Tensor gamma;
  Tensor beta;

  void visit(const std::string& prefix, const TensorVisitor& f);
  void visit(const std::string& prefix, const ConstTensorVisitor& f) const;
};

// Running statistics; not trained by the optimizer.
struct BatchNormStats {
  Tensor running_mean;
  Tensor running_var;

  void visit(const std::string& prefix, const TensorVisitor& f);
  void visit(const std::string& prefix, const ConstTensorVisitor& f) const;
};

ConvParams make_conv(std::size_t in, std::size_t out, double weight_std, Rng& rng);
LinearParams make_linear(std::size_t in, std::size_t out, double weight_std, Rng& rng);
BatchNormParams make_batchnorm(std::size_t features);
BatchNormStats make_batchnorm_stats(std::size_t features);

std::size_t conv_output_size(std::size_t in, std::size_t stride);

// x: [C, H, W] -> [out, ceil(H/stride), ceil(W/stride)]
Tensor conv2d_forward(const ConvParams& p, const Tensor& x, std::size_t stride);
// Accumulates dL/dweight and dL/dbias into grad. Returns dL/dx, or an empty
// tensor when want_input_grad is false.
Tensor conv2d_backward(const ConvParams& p, const Tensor& x, const Tensor& dy, std::size_t stride, ConvParams& grad,
                       bool want_input_grad = true);

// x: [B, in] -> [B, out]
Tensor linear_forward(const LinearParams& p, const Tensor& x);
Tensor linear_backward(const LinearParams& p, const Tensor& x, const Tensor& dy, LinearParams& grad);

void relu_inplace(Tensor& x);
// Masks dy where the forward output was not positive.
void relu_backward_inplace(const Tensor& y, Tensor& dy);
void tanh_inplace(Tensor& x);
void tanh_backward_inplace(const Tensor& y, Tensor& dy);

// Concatenates [C1,H,W] and [C2,H,W] along channels.
Tensor concat_channels(const Tensor& a, const Tensor& b);
// Splits a [C1+C2,H,W] gradient back into its parts.
void split_channels(const Tensor& both, std::size_t first_channels, Tensor& a, Tensor& b);

// Channel-wise spatial mean: [C,H,W] -> [C]
Tensor global_average_pool(const Tensor& x);
Tensor global_average_pool_backward(const Tensor& dy, const Shape& input_shape);

struct BatchNormCache {
  Tensor x_hat;                // [B, F]
  std::vector<double> inv_std;  // [F]
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

// Uses batch statistics and updates the running estimates (unbiased variance).
Tensor batchnorm_forward_train(const BatchNormParams& p, BatchNormStats& stats, const Tensor& x,
                               BatchNormCache& cache);
Tensor batchnorm_forward_eval(const BatchNormParams& p, const BatchNormStats& stats, const Tensor& x);
Tensor batchnorm_backward(const BatchNormParams& p, const BatchNormCache& cache, const Tensor& dy,
                          BatchNormParams& grad);

// Inverted dropout mask: entries are 0 or 1/(1-rate).
Tensor dropout_mask(const Shape& shape, double rate, Rng& rng);

// Row-wise softmax of [B, C] logits (or a single [C] vector).
Tensor softmax(const Tensor& logits);

}  // namespace idf::nn
