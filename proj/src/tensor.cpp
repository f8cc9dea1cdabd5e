#include "xda/tensor.hpp"

#include <cmath>
#include <sstream>

#include "xda/error.hpp"

namespace xda {

int64_t shape_numel(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

std::string shape_str(const std::vector<int64_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

static void check_shape(const std::vector<int64_t>& shape) {
  for (int64_t d : shape) {
    if (d <= 0)
      throw DimensionError("tensor dimensions must be positive, got " +
                           shape_str(shape));
  }
}

Tensor Tensor::zeros(std::vector<int64_t> shape) {
  check_shape(shape);
  Tensor t;
  t.data.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
  t.shape = std::move(shape);
  return t;
}

Tensor Tensor::full(std::vector<int64_t> shape, double value) {
  Tensor t = zeros(std::move(shape));
  for (double& v : t.data) v = value;
  return t;
}

Tensor Tensor::scalar(double value) {
  Tensor t;
  t.data.assign(1, value);
  return t;
}

Tensor Tensor::of(std::vector<int64_t> shape, std::vector<double> values) {
  check_shape(shape);
  if (shape_numel(shape) != static_cast<int64_t>(values.size()))
    throw DimensionError("shape " + xda::shape_str(shape) + " expects " +
                         std::to_string(shape_numel(shape)) +
                         " values, got " + std::to_string(values.size()));
  Tensor t;
  t.shape = std::move(shape);
  t.data = std::move(values);
  return t;
}

int64_t Tensor::numel() const { return static_cast<int64_t>(data.size()); }

double Tensor::item() const {
  if (data.size() != 1)
    throw ContractError("item() on tensor of shape " + shape_str());
  return data[0];
}

bool Tensor::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

std::string Tensor::shape_str() const { return xda::shape_str(shape); }

}  // namespace xda
