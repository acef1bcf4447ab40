#include "agfa/tensor_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "agfa/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "tensor serialization assumes a little-endian host");

namespace agfa {

namespace {
constexpr char kMagic[4] = {'A', 'G', 'T', '1'};
}

void save_tensor(std::ostream& os, const Tensor& t) {
  os.write(kMagic, 4);
  uint8_t rank = static_cast<uint8_t>(t.rank());
  os.write(reinterpret_cast<const char*>(&rank), 1);
  for (int e : t.shape()) {
    uint32_t ext = static_cast<uint32_t>(e);
    os.write(reinterpret_cast<const char*>(&ext), 4);
  }
  const auto& v = t.values();
  os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * 8));
  if (!os) fail(ErrorKind::kIo, "tensor write failed");
}

Tensor load_tensor(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4)) fail(ErrorKind::kTruncatedPayload, "tensor record ends before magic");
  if (std::memcmp(magic, "AGT", 3) != 0)
    fail(ErrorKind::kMalformedHeader, "not a tensor record (bad magic)");
  if (magic[3] != '1')
    fail(ErrorKind::kUnsupportedVersion, std::string("tensor record version '") + magic[3] + "'");
  uint8_t rank = 0;
  if (!is.read(reinterpret_cast<char*>(&rank), 1))
    fail(ErrorKind::kTruncatedPayload, "tensor record ends before rank");
  if (rank == 0) fail(ErrorKind::kMalformedHeader, "tensor rank 0");
  Shape shape(rank);
  for (int a = 0; a < rank; ++a) {
    uint32_t ext = 0;
    if (!is.read(reinterpret_cast<char*>(&ext), 4))
      fail(ErrorKind::kTruncatedPayload, "tensor record ends inside extents");
    if (ext == 0) fail(ErrorKind::kMalformedHeader, "tensor extent 0 on axis " + std::to_string(a));
    shape[a] = static_cast<int>(ext);
  }
  std::vector<double> values(shape_numel(shape));
  if (!is.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * 8)))
    fail(ErrorKind::kTruncatedPayload, "tensor record ends inside payload");
  return Tensor::from_values(shape, std::move(values));
}

void save_tensor_file(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::kIo, "cannot open for write: " + path);
  save_tensor(os, t);
}

Tensor load_tensor_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::kIo, "cannot open for read: " + path);
  return load_tensor(is);
}

}  // namespace agfa
