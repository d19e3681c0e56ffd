#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hgm/common.hpp"
#include "hgm/diff/tensor.hpp"

namespace hgm::io {

// Binary tensor container: magic "HGM1", u8 dtype (0 = f32, 1 = i32),
// u8 ndim, two reserved zero bytes, ndim little-endian u32 dims, then the
// row-major little-endian payload.
struct Blob {
  std::uint8_t dtype = 0;
  std::vector<std::uint32_t> dims;
  std::vector<float> f32;
  std::vector<std::int32_t> i32;

  std::size_t element_count() const;
};

void write_blob(const std::string& path, const Blob& blob);
Blob read_blob(const std::string& path);

Blob blob_from_matrix(const Matrix& m);
Matrix matrix_from_blob(const Blob& b);  // requires f32, ndim <= 2
Blob blob_from_tensor(const diff::Tensor& t);
diff::Tensor tensor_from_blob(const Blob& b);
Blob blob_from_i32(const std::vector<std::int32_t>& v);

}  // namespace hgm::io
