#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "cdrnp/errors.hpp"

namespace cdrnp {

// Dense row-major double tensor. Rank 1 (vectors) and rank 2 (matrices)
// are the only shapes the model needs; scalars are shape {1}.
struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<std::int64_t> s, std::vector<double> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (numel(shape) != static_cast<std::int64_t>(data.size())) {
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    }
  }

  static std::int64_t numel(const std::vector<std::int64_t>& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
  }

  static std::string shape_str(const std::vector<std::int64_t>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i) out += "x";
      out += std::to_string(s[i]);
    }
    return out + "]";
  }

  static Tensor zeros(std::vector<std::int64_t> s) {
    auto n = numel(s);
    return Tensor(std::move(s), std::vector<double>(static_cast<std::size_t>(n), 0.0));
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static Tensor vec(std::vector<double> d) {
    auto n = static_cast<std::int64_t>(d.size());
    return Tensor({n}, std::move(d));
  }

  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
  std::int64_t rows() const { return shape.empty() ? 0 : shape[0]; }
  std::int64_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  double& at(std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
  double at(std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool finite() const {
    for (double v : data) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }

  std::string shape_str() const { return shape_str(shape); }
};

// A named trainable tensor with its gradient accumulator.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros(value.shape)) {}

  void zero_grad() { grad.fill(0.0); }
  std::int64_t size() const { return value.size(); }
};

}  // namespace cdrnp
