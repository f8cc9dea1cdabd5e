#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace xda {

/// Dense row-major tensor of 64-bit floats. Rank 0 denotes a scalar.
/// `grad` is empty until a backward pass deposits a same-sized gradient.
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;

  Tensor() = default;

  static Tensor zeros(std::vector<int64_t> shape);
  static Tensor full(std::vector<int64_t> shape, double value);
  static Tensor scalar(double value);
  static Tensor of(std::vector<int64_t> shape, std::vector<double> values);

  int64_t numel() const;
  size_t rank() const { return shape.size(); }
  int64_t dim(size_t i) const { return shape[i]; }
  bool same_shape(const Tensor& other) const { return shape == other.shape; }

  double& operator()(int64_t i) { return data[static_cast<size_t>(i)]; }
  double operator()(int64_t i) const { return data[static_cast<size_t>(i)]; }
  double& operator()(int64_t r, int64_t c) {
    return data[static_cast<size_t>(r * shape[1] + c)];
  }
  double operator()(int64_t r, int64_t c) const {
    return data[static_cast<size_t>(r * shape[1] + c)];
  }

  /// Value of a one-element tensor.
  double item() const;

  bool all_finite() const;
  std::string shape_str() const;
};

std::string shape_str(const std::vector<int64_t>& shape);
int64_t shape_numel(const std::vector<int64_t>& shape);

}  // namespace xda
