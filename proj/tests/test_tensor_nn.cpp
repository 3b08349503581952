#include <gtest/gtest.h>

#include <cmath>

#include "idf/error.hpp"
#include "idf/nn.hpp"
#include "testing.hpp"

namespace {

using idf::Shape;
using idf::Tensor;
using testing_util::max_fd_error;
using testing_util::random_tensor;
using testing_util::weighted_sum;

// Direct convolution, zero padding 1.
Tensor naive_conv(const idf::nn::ConvParams& p, const Tensor& x, std::size_t stride) {
  const std::size_t oc = p.out_channels(), ic = p.in_channels(), h = x.dim(1), w = x.dim(2);
  const std::size_t oh = (h + stride - 1) / stride, ow = (w + stride - 1) / stride;
  Tensor y({oc, oh, ow});
  for (std::size_t o = 0; o < oc; ++o)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double s = p.bias[o];
        for (std::size_t c = 0; c < ic; ++c)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const long iy = static_cast<long>(oy * stride) + ky - 1;
              const long ix = static_cast<long>(ox * stride) + kx - 1;
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
              s += p.weight[((o * ic + c) * 3 + ky) * 3 + kx] * x.at(c, iy, ix);
            }
        y.at(o, oy, ox) = s;
      }
  return y;
}

TEST(Tensor, ShapeAndArithmetic) {
  Tensor a({2, 3}, 1.5);
  EXPECT_EQ(a.size(), 6u);
  EXPECT_DOUBLE_EQ(a.sum(), 9.0);
  Tensor b({2, 3}, 0.5);
  a += b;
  a *= 2.0;
  EXPECT_DOUBLE_EQ(a[5], 4.0);
  EXPECT_DOUBLE_EQ(b.squared_norm(), 1.5);
  EXPECT_THROW(a += Tensor({3, 2}), idf::Error);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>(3)), idf::Error);
  a.reshape({6});
  EXPECT_EQ(a.rank(), 1u);
  EXPECT_THROW(a.reshape({4}), idf::Error);
}

TEST(Conv, MatchesDirectConvolution) {
  std::mt19937_64 rng(1);
  idf::Rng init(2);
  for (std::size_t stride : {1, 2}) {
    for (auto [h, w] : {std::pair{7, 5}, std::pair{8, 8}, std::pair{1, 3}, std::pair{2, 1}}) {
      const auto conv = idf::nn::make_conv(3, 4, 0.5, init);
      auto p = conv;
      p.bias = random_tensor({4}, rng);
      const Tensor x = random_tensor({3, static_cast<std::size_t>(h), static_cast<std::size_t>(w)}, rng);
      const Tensor y = idf::nn::conv2d_forward(p, x, stride);
      const Tensor expected = naive_conv(p, x, stride);
      ASSERT_EQ(y.shape(), expected.shape());
      for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], expected[i], 1e-12);
    }
  }
}

TEST(Conv, LargeInputCrossesPixelChunks) {
  std::mt19937_64 rng(3);
  idf::Rng init(4);
  const auto p = idf::nn::make_conv(2, 3, 0.5, init);
  const Tensor x = random_tensor({2, 70, 90}, rng);
  const Tensor y = idf::nn::conv2d_forward(p, x, 1);
  const Tensor expected = naive_conv(p, x, 1);
  for (std::size_t i = 0; i < y.size(); ++i) ASSERT_NEAR(y[i], expected[i], 1e-12);
}

TEST(Conv, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  idf::Rng init(6);
  for (std::size_t stride : {1, 2}) {
    auto p = idf::nn::make_conv(2, 3, 0.5, init);
    p.bias = random_tensor({3}, rng);
    Tensor x = random_tensor({2, 5, 6}, rng);
    const Tensor wts = random_tensor(idf::nn::conv2d_forward(p, x, stride).shape(), rng);
    auto grad = p;
    grad.weight.fill(0.0);
    grad.bias.fill(0.0);
    const Tensor dx = idf::nn::conv2d_backward(p, x, wts, stride, grad, true);
    auto f = [&] { return weighted_sum(idf::nn::conv2d_forward(p, x, stride), wts); };
    EXPECT_LT(max_fd_error(f, x, dx), 1e-6);
    EXPECT_LT(max_fd_error(f, p.weight, grad.weight), 1e-6);
    EXPECT_LT(max_fd_error(f, p.bias, grad.bias), 1e-6);
  }
}

TEST(Conv, RejectsChannelMismatch) {
  idf::Rng init(7);
  const auto p = idf::nn::make_conv(3, 2, 0.1, init);
  EXPECT_THROW(idf::nn::conv2d_forward(p, Tensor({2, 4, 4}), 1), idf::Error);
  EXPECT_THROW(idf::nn::conv2d_forward(p, Tensor({3, 4}), 1), idf::Error);
}

TEST(Linear, ForwardBackward) {
  std::mt19937_64 rng(8);
  idf::Rng init(9);
  auto p = idf::nn::make_linear(4, 3, 0.5, init);
  p.bias = random_tensor({3}, rng);
  Tensor x = random_tensor({2, 4}, rng);
  const Tensor y = idf::nn::linear_forward(p, x);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t o = 0; o < 3; ++o) {
      double s = p.bias[o];
      for (std::size_t i = 0; i < 4; ++i) s += p.weight[o * 4 + i] * x[b * 4 + i];
      EXPECT_NEAR(y[b * 3 + o], s, 1e-14);
    }
  const Tensor wts = random_tensor(y.shape(), rng);
  auto grad = p;
  grad.weight.fill(0.0);
  grad.bias.fill(0.0);
  const Tensor dx = idf::nn::linear_backward(p, x, wts, grad);
  auto f = [&] { return weighted_sum(idf::nn::linear_forward(p, x), wts); };
  EXPECT_LT(max_fd_error(f, x, dx), 1e-7);
  EXPECT_LT(max_fd_error(f, p.weight, grad.weight), 1e-7);
  EXPECT_LT(max_fd_error(f, p.bias, grad.bias), 1e-7);
}

TEST(BatchNorm, NormalizesAndUpdatesRunningStats) {
  std::mt19937_64 rng(10);
  const auto p = idf::nn::make_batchnorm(3);
  auto stats = idf::nn::make_batchnorm_stats(3);
  const Tensor x = random_tensor({5, 3}, rng, -2.0, 3.0);
  idf::nn::BatchNormCache cache;
  const Tensor y = idf::nn::batchnorm_forward_train(p, stats, x, cache);
  for (std::size_t f = 0; f < 3; ++f) {
    double mean = 0.0, var = 0.0, ymean = 0.0, yvar = 0.0;
    for (std::size_t b = 0; b < 5; ++b) mean += x[b * 3 + f] / 5.0;
    for (std::size_t b = 0; b < 5; ++b) var += (x[b * 3 + f] - mean) * (x[b * 3 + f] - mean) / 5.0;
    for (std::size_t b = 0; b < 5; ++b) ymean += y[b * 3 + f] / 5.0;
    for (std::size_t b = 0; b < 5; ++b) yvar += y[b * 3 + f] * y[b * 3 + f] / 5.0;
    EXPECT_NEAR(ymean, 0.0, 1e-12);
    EXPECT_NEAR(yvar, var / (var + 1e-5), 1e-9);
    EXPECT_NEAR(stats.running_mean[f], 0.1 * mean, 1e-12);
    EXPECT_NEAR(stats.running_var[f], 0.9 + 0.1 * var * 5.0 / 4.0, 1e-12);
  }
  EXPECT_THROW(idf::nn::batchnorm_forward_train(p, stats, Tensor({1, 3}), cache), idf::Error);
}

TEST(BatchNorm, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  auto p = idf::nn::make_batchnorm(3);
  p.gamma = random_tensor({3}, rng, 0.5, 1.5);
  p.beta = random_tensor({3}, rng);
  Tensor x = random_tensor({4, 3}, rng);
  auto stats = idf::nn::make_batchnorm_stats(3);
  idf::nn::BatchNormCache cache;
  const Tensor wts = random_tensor({4, 3}, rng);
  idf::nn::batchnorm_forward_train(p, stats, x, cache);
  auto grad = p;
  grad.gamma.fill(0.0);
  grad.beta.fill(0.0);
  const Tensor dx = idf::nn::batchnorm_backward(p, cache, wts, grad);
  auto f = [&] {
    auto s = idf::nn::make_batchnorm_stats(3);
    idf::nn::BatchNormCache c;
    return weighted_sum(idf::nn::batchnorm_forward_train(p, s, x, c), wts);
  };
  EXPECT_LT(max_fd_error(f, x, dx), 1e-5);
  EXPECT_LT(max_fd_error(f, p.gamma, grad.gamma), 1e-6);
  EXPECT_LT(max_fd_error(f, p.beta, grad.beta), 1e-6);
}

TEST(Activations, ReluTanhAndPooling) {
  std::mt19937_64 rng(12);
  Tensor x = random_tensor({2, 3, 4}, rng);
  Tensor r = x;
  idf::nn::relu_inplace(r);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(r[i], std::max(0.0, x[i]));
  Tensor dy(x.shape(), 1.0);
  idf::nn::relu_backward_inplace(r, dy);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(dy[i], x[i] > 0 ? 1.0 : 0.0);

  Tensor t = x;
  idf::nn::tanh_inplace(t);
  Tensor dt(x.shape(), 1.0);
  idf::nn::tanh_backward_inplace(t, dt);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(dt[i], 1.0 - std::tanh(x[i]) * std::tanh(x[i]), 1e-14);

  const Tensor pooled = idf::nn::global_average_pool(x);
  for (std::size_t c = 0; c < 2; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < 12; ++i) s += x[c * 12 + i];
    EXPECT_NEAR(pooled[c], s / 12.0, 1e-14);
  }
  const Tensor back = idf::nn::global_average_pool_backward(Tensor({2}, std::vector<double>{12.0, 24.0}), x.shape());
  EXPECT_DOUBLE_EQ(back[0], 1.0);
  EXPECT_DOUBLE_EQ(back[23], 2.0);
}

TEST(Channels, ConcatThenSplitRoundTrips) {
  std::mt19937_64 rng(13);
  const Tensor a = random_tensor({2, 3, 3}, rng), b = random_tensor({4, 3, 3}, rng);
  const Tensor both = idf::nn::concat_channels(a, b);
  ASSERT_EQ(both.dim(0), 6u);
  EXPECT_EQ(both.at(1, 2, 2), a.at(1, 2, 2));
  EXPECT_EQ(both.at(5, 0, 1), b.at(3, 0, 1));
  Tensor a2, b2;
  idf::nn::split_channels(both, 2, a2, b2);
  EXPECT_EQ(a2.storage(), a.storage());
  EXPECT_EQ(b2.storage(), b.storage());
  EXPECT_THROW(idf::nn::concat_channels(a, Tensor({1, 2, 3})), idf::Error);
}

TEST(Softmax, RowsSumToOneAndAreShiftInvariant) {
  const Tensor logits({2, 3}, std::vector<double>{1.0, 2.0, 3.0, 1001.0, 1002.0, 1003.0});
  const Tensor p = idf::nn::softmax(logits);
  for (std::size_t b = 0; b < 2; ++b) EXPECT_NEAR(p[b * 3] + p[b * 3 + 1] + p[b * 3 + 2], 1.0, 1e-15);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(p[j], p[3 + j], 1e-15);
  EXPECT_NEAR(p[2], std::exp(3.0) / (std::exp(1.0) + std::exp(2.0) + std::exp(3.0)), 1e-15);
}

TEST(Dropout, InvertedMaskKeepsExpectation) {
  idf::Rng rng(14);
  const Tensor m = idf::nn::dropout_mask({20000}, 0.5, rng);
  double mean = 0.0;
  for (double v : m.values()) {
    EXPECT_TRUE(v == 0.0 || v == 2.0);
    mean += v / 20000.0;
  }
  EXPECT_NEAR(mean, 1.0, 0.05);
  const Tensor ones = idf::nn::dropout_mask({10}, 0.0, rng);
  for (double v : ones.values()) EXPECT_EQ(v, 1.0);
}

}  // namespace
