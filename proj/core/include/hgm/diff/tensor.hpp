#pragma once

#include <cstddef>
#include <initializer_list>
#include <vector>

#include "hgm/common.hpp"

namespace hgm::diff {

// Dense row-major float tensor. Operators treat the shape as
// (product of leading dims) x (last dim), so [N, d] semantics hold for any
// rank with broadcasting over leading dims.
struct Tensor {
  std::vector<int> shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, float fill = 0.0f);

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
  static Tensor scalar(float v);
  static Tensor row(const std::vector<float>& values);
  static Tensor from_matrix(const Matrix& m);

  std::size_t size() const { return data.size(); }
  int cols() const { return shape.empty() ? 0 : shape.back(); }
  int rows() const;
  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  float& at(int r, int c) { return data[std::size_t(r) * cols() + c]; }
  float at(int r, int c) const { return data[std::size_t(r) * cols() + c]; }

  void check_finite(const char* where) const;
};

}  // namespace hgm::diff
