#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "alc/errors.hpp"

namespace alc::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

/// Dense row-major array of doubles.
struct Tensor {
  Shape shape;
  std::vector<double> values;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0) : shape(std::move(s)), values(shape_size(shape), fill) {}
  Tensor(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
    if (values.size() != shape_size(shape)) {
      throw ShapeError("tensor of shape " + shape_str(shape) + " given " + std::to_string(values.size()) +
                       " values");
    }
  }

  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape); }

  std::size_t size() const noexcept { return values.size(); }
  std::size_t rank() const noexcept { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  double* data() noexcept { return values.data(); }
  const double* data() const noexcept { return values.data(); }
  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }
  std::span<double> span() noexcept { return values; }
  std::span<const double> span() const noexcept { return values; }

  void fill(double v) { std::fill(values.begin(), values.end(), v); }
  bool operator==(const Tensor&) const = default;
};

inline bool all_finite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

inline void require_finite(const Tensor& t, const char* op) {
  if (!all_finite(t.span())) throw NumericError(std::string(op) + ": non-finite value in output");
}

/// A trainable tensor with its gradient and momentum buffers.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor velocity;

  Parameter() = default;
  Parameter(std::string n, Tensor init)
      : name(std::move(n)), value(std::move(init)), grad(Tensor::zeros_like(value)), velocity(Tensor::zeros_like(value)) {}

  std::size_t size() const noexcept { return value.size(); }
  void zero_grad() { grad.fill(0.0); }
};

}  // namespace alc::nn
