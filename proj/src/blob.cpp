#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

#include "mmf/data.hpp"

namespace mmf {
namespace {

constexpr std::uint8_t kMagic[4] = {0x4D, 0x4D, 0x45, 0x42};  // "MMEB"

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xFF));
  out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xFF));
  out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xFF));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

static_assert(std::endian::native == std::endian::little,
              "payload serialization assumes a little-endian host");
static_assert(sizeof(float) == 4 && sizeof(double) == 8);

}  // namespace

std::vector<std::uint8_t> write_blob(const BlobArray& array, BlobDtype dtype) {
  if (array.dims.size() != 2 && array.dims.size() != 3)
    throw DataError("blob rank must be 2 or 3, got " + std::to_string(array.dims.size()));
  std::size_t expect = 1;
  for (std::size_t d : array.dims) {
    if (d == 0 || d > std::numeric_limits<std::uint32_t>::max())
      throw DataError("blob extent out of range: " + std::to_string(d));
    expect *= d;
  }
  if (expect != array.values.size())
    throw DataError("blob payload size mismatch: dims imply " + std::to_string(expect) +
                    " values, got " + std::to_string(array.values.size()));

  std::vector<std::uint8_t> out;
  std::size_t elem = dtype == BlobDtype::kFloat32 ? 4 : 8;
  out.reserve(16 + 4 * array.dims.size() + elem * expect);
  for (std::uint8_t m : kMagic) out.push_back(m);
  put_u32(out, kBlobVersion);
  put_u32(out, static_cast<std::uint32_t>(dtype));
  put_u32(out, static_cast<std::uint32_t>(array.dims.size()));
  for (std::size_t d : array.dims) put_u32(out, static_cast<std::uint32_t>(d));

  std::size_t pos = out.size();
  out.resize(pos + elem * expect);
  if (dtype == BlobDtype::kFloat32) {
    for (double v : array.values) {
      float f = static_cast<float>(v);
      std::memcpy(out.data() + pos, &f, 4);
      pos += 4;
    }
  } else {
    std::memcpy(out.data() + pos, array.values.data(), 8 * array.values.size());
  }
  return out;
}

BlobArray read_blob(const std::uint8_t* bytes, std::size_t len) {
  if (len < 4 || std::memcmp(bytes, kMagic, 4) != 0)
    throw DataError("embedding blob: bad magic (not an MMEB file)");
  if (len < 16) throw DataError("embedding blob: truncated header");
  std::uint32_t version = get_u32(bytes + 4);
  if (version != kBlobVersion)
    throw DataError("embedding blob: unsupported version " + std::to_string(version));
  std::uint32_t dtype = get_u32(bytes + 8);
  if (dtype > 1) throw DataError("embedding blob: unknown dtype code " + std::to_string(dtype));
  std::uint32_t rank = get_u32(bytes + 12);
  if (rank != 2 && rank != 3)
    throw DataError("embedding blob: rank must be 2 or 3, got " + std::to_string(rank));
  if (len < 16 + 4ull * rank) throw DataError("embedding blob: truncated header");

  BlobArray array;
  std::size_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    std::uint32_t d = get_u32(bytes + 16 + 4 * i);
    if (d == 0) throw DataError("embedding blob: zero extent");
    array.dims.push_back(d);
    count *= d;
  }
  std::size_t elem = dtype == 0 ? 4 : 8;
  std::size_t offset = 16 + 4ull * rank;
  if (len < offset + elem * count)
    throw DataError("embedding blob: truncated payload (need " +
                    std::to_string(offset + elem * count) + " bytes, have " +
                    std::to_string(len) + ")");

  array.values.resize(count);
  if (dtype == 0) {
    for (std::size_t i = 0; i < count; ++i) {
      float f;
      std::memcpy(&f, bytes + offset + 4 * i, 4);
      array.values[i] = static_cast<double>(f);
    }
  } else {
    std::memcpy(array.values.data(), bytes + offset, 8 * count);
  }
  return array;
}

BlobArray read_blob(const std::vector<std::uint8_t>& bytes) {
  return read_blob(bytes.data(), bytes.size());
}

void write_blob_file(const std::string& path, const BlobArray& array, BlobDtype dtype) {
  std::vector<std::uint8_t> bytes = write_blob(array, dtype);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write: " + path);
}

BlobArray read_blob_file(const std::string& path, std::uint64_t offset) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open embedding blob: " + path);
  in.seekg(0, std::ios::end);
  std::uint64_t size = static_cast<std::uint64_t>(in.tellg());
  if (offset >= size)
    throw DataError("blob offset " + std::to_string(offset) + " past end of " + path);
  in.seekg(static_cast<std::streamoff>(offset));
  std::vector<std::uint8_t> bytes(size - offset);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!in) throw DataError("read failed: " + path);
  return read_blob(bytes);
}

}  // namespace mmf
