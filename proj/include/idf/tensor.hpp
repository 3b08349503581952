#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace idf {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

// Dense row-major tensor of doubles. Used for images, activations, parameters
// and their gradients.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  double* data() noexcept { return values_.data(); }
  const double* data() const noexcept { return values_.data(); }
  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  std::vector<double>& storage() noexcept { return values_; }
  const std::vector<double>& storage() const noexcept { return values_; }

  double& operator[](std::size_t i) noexcept { return values_[i]; }
  double operator[](std::size_t i) const noexcept { return values_[i]; }

  // (c, y, x) access for rank-3 tensors.
  double& at(std::size_t c, std::size_t y, std::size_t x) {
    return values_[(c * shape_[1] + y) * shape_[2] + x];
  }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return values_[(c * shape_[1] + y) * shape_[2] + x];
  }

  void fill(double v);
  void reshape(Shape shape);
  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }

  Tensor& operator+=(const Tensor& other);
  Tensor& operator*=(double s);

  double sum() const;
  double squared_norm() const;

 private:
  Shape shape_;
  std::vector<double> values_;
};

std::size_t shape_volume(const Shape& shape);

// Throws a dimension error naming `what` when the shapes differ.
void require_same_shape(const Tensor& a, const Tensor& b, const std::string& what);

}  // namespace idf
