#pragma once

// Shared fixtures for the unit tests: random inputs and an independent
// central-difference checker.

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <filesystem>
#include <string>
#include <unistd.h>

#include "idf/image.hpp"
#include "idf/tensor.hpp"

namespace testing_util {

inline idf::Tensor random_tensor(const idf::Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  idf::Tensor t(shape);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

inline idf::Image random_image(std::size_t h, std::size_t w, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  return idf::Image::from_tensor(random_tensor({3, h, w}, rng, lo, hi));
}

// Weighted sum sum_i w_i y_i, used to turn a tensor-valued map into a scalar
// whose upstream gradient is w.
inline double weighted_sum(const idf::Tensor& y, const idf::Tensor& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * w[i];
  return s;
}

// Checks every coordinate (or `limit` evenly spaced ones) of `x` against the
// analytic gradient. Returns the largest relative error.
inline double max_fd_error(const std::function<double()>& f, idf::Tensor& x, const idf::Tensor& analytic,
                           std::size_t limit = 0, double h = 1e-5, double floor = 1e-7) {
  EXPECT_EQ(x.size(), analytic.size());
  const std::size_t n = x.size();
  const std::size_t step = (limit == 0 || limit >= n) ? 1 : n / limit;
  double worst = 0.0;
  for (std::size_t i = 0; i < n; i += step) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = f();
    x[i] = orig - h;
    const double down = f();
    x[i] = orig;
    const double num = (up - down) / (2.0 * h);
    const double err = std::abs(num - analytic[i]) / std::max({std::abs(num), std::abs(analytic[i]), floor});
    worst = std::max(worst, err);
  }
  return worst;
}

// Fresh directory removed on destruction.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() / ("idf_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing_util
