#include "idf/tensor.hpp"

#include <numeric>
#include <sstream>

#include "idf/error.hpp"
#include "idf/simd/kernels.hpp"

namespace idf {

std::size_t shape_volume(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? ", " : "") << shape[i];
  out << ')';
  return out.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), values_(shape_volume(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), values_(std::move(values)) {
  require(values_.size() == shape_volume(shape_), ErrorKind::Dimension,
          "tensor of shape " + shape_string(shape_) + " given " + std::to_string(values_.size()) + " values");
}

void Tensor::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

void Tensor::reshape(Shape shape) {
  require(shape_volume(shape) == values_.size(), ErrorKind::Dimension,
          "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  shape_ = std::move(shape);
}

Tensor& Tensor::operator+=(const Tensor& other) {
  require_same_shape(*this, other, "tensor add");
  simd::axpy(1.0, other.data(), data(), size());
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (double& v : values_) v *= s;
  return *this;
}

double Tensor::sum() const { return std::accumulate(values_.begin(), values_.end(), 0.0); }

double Tensor::squared_norm() const { return simd::dot(data(), data(), size()); }

void require_same_shape(const Tensor& a, const Tensor& b, const std::string& what) {
  if (!a.same_shape(b))
    fail(ErrorKind::Dimension, what + ": shape " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

}  // namespace idf
