#include "hgm/io.hpp"

#include <cstring>
#include <fstream>

namespace hgm::io {

namespace {

void put_u32(std::vector<char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

}  // namespace

std::size_t Blob::element_count() const {
  std::size_t n = 1;
  for (std::uint32_t d : dims) n *= d;
  return n;
}

void write_blob(const std::string& path, const Blob& blob) {
  if (blob.dims.empty() || blob.dims.size() > 255) throw Error("bad-blob", "dims");
  std::size_t n = blob.element_count();
  if ((blob.dtype == 0 && blob.f32.size() != n) || (blob.dtype == 1 && blob.i32.size() != n))
    throw Error("bad-blob", "payload size mismatch");
  std::vector<char> out;
  out.reserve(8 + 4 * blob.dims.size() + 4 * n);
  out.push_back('H');
  out.push_back('G');
  out.push_back('M');
  out.push_back('1');
  out.push_back(static_cast<char>(blob.dtype));
  out.push_back(static_cast<char>(blob.dims.size()));
  out.push_back(0);
  out.push_back(0);
  for (std::uint32_t d : blob.dims) put_u32(out, d);
  if (blob.dtype == 0) {
    for (float v : blob.f32) put_u32(out, std::bit_cast<std::uint32_t>(v));
  } else {
    for (std::int32_t v : blob.i32) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("io-error", "cannot write " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw Error("io-error", "write failed " + path);
}

Blob read_blob(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("io-error", "cannot read " + path);
  std::vector<char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < 8 || std::memcmp(buf.data(), "HGM1", 4) != 0)
    throw Error("bad-blob", "bad magic in " + path);
  Blob blob;
  blob.dtype = static_cast<std::uint8_t>(buf[4]);
  if (blob.dtype > 1) throw Error("bad-blob", "unknown dtype in " + path);
  std::size_t ndim = static_cast<unsigned char>(buf[5]);
  if (buf[6] != 0 || buf[7] != 0) throw Error("bad-blob", "reserved bytes in " + path);
  if (buf.size() < 8 + 4 * ndim) throw Error("bad-blob", "truncated header in " + path);
  blob.dims.resize(ndim);
  for (std::size_t i = 0; i < ndim; ++i) blob.dims[i] = get_u32(buf.data() + 8 + 4 * i);
  std::size_t n = blob.element_count();
  if (buf.size() != 8 + 4 * ndim + 4 * n) throw Error("bad-blob", "length mismatch in " + path);
  const char* payload = buf.data() + 8 + 4 * ndim;
  if (blob.dtype == 0) {
    blob.f32.resize(n);
    for (std::size_t i = 0; i < n; ++i)
      blob.f32[i] = std::bit_cast<float>(get_u32(payload + 4 * i));
  } else {
    blob.i32.resize(n);
    for (std::size_t i = 0; i < n; ++i)
      blob.i32[i] = std::bit_cast<std::int32_t>(get_u32(payload + 4 * i));
  }
  return blob;
}

Blob blob_from_matrix(const Matrix& m) {
  Blob b;
  b.dims = {static_cast<std::uint32_t>(m.rows), static_cast<std::uint32_t>(m.cols)};
  b.f32 = m.data;
  return b;
}

Matrix matrix_from_blob(const Blob& b) {
  if (b.dtype != 0 || b.dims.empty() || b.dims.size() > 2)
    throw Error("bad-blob", "expected f32 matrix");
  Matrix m(static_cast<int>(b.dims[0]), b.dims.size() == 2 ? static_cast<int>(b.dims[1]) : 1);
  m.data = b.f32;
  return m;
}

Blob blob_from_tensor(const diff::Tensor& t) {
  Blob b;
  for (int d : t.shape) b.dims.push_back(static_cast<std::uint32_t>(d));
  b.f32 = t.data;
  return b;
}

diff::Tensor tensor_from_blob(const Blob& b) {
  if (b.dtype != 0) throw Error("bad-blob", "expected f32 tensor");
  std::vector<int> shape;
  for (std::uint32_t d : b.dims) shape.push_back(static_cast<int>(d));
  diff::Tensor t(shape);
  t.data = b.f32;
  return t;
}

Blob blob_from_i32(const std::vector<std::int32_t>& v) {
  Blob b;
  b.dtype = 1;
  b.dims = {static_cast<std::uint32_t>(v.size())};
  b.i32 = v;
  return b;
}

}  // namespace hgm::io
