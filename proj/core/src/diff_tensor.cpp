#include "hgm/diff/tensor.hpp"

#include <cmath>

namespace hgm::diff {

Tensor::Tensor(std::vector<int> s, float fill) : shape(std::move(s)) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw Error("bad-shape", "non-positive dimension");
    n *= static_cast<std::size_t>(d);
  }
  data.assign(n, fill);
}

Tensor Tensor::scalar(float v) {
  Tensor t({1, 1});
  t.data[0] = v;
  return t;
}

Tensor Tensor::row(const std::vector<float>& values) {
  Tensor t({1, static_cast<int>(values.size())});
  t.data = values;
  return t;
}

Tensor Tensor::from_matrix(const Matrix& m) {
  Tensor t({m.rows, m.cols});
  t.data = m.data;
  return t;
}

int Tensor::rows() const {
  int r = 1;
  for (std::size_t i = 0; i + 1 < shape.size(); ++i) r *= shape[i];
  return r;
}

void Tensor::check_finite(const char* where) const {
  for (float v : data)
    if (!std::isfinite(v)) throw Error("non-finite", where);
}

}  // namespace hgm::diff
