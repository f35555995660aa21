#include "mcpmix/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>

#include "mcpmix/error.hpp"

namespace mcpmix {

namespace {

constexpr char kMagic[4] = {'M', 'C', 'P', 'T'};

void put_u32(std::vector<char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

std::size_t RawArray::element_count() const {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                         [](std::size_t a, std::uint32_t d) { return a * d; });
}

void write_raw(const std::filesystem::path& path, const RawArray& array) {
  const std::size_t n = array.element_count();
  const std::size_t have = array.kind == ArrayKind::F32 ? array.f32.size() : array.u8.size();
  if (n != have) throw ShapeError("write_raw: payload length does not match dims");

  std::vector<char> buf(std::begin(kMagic), std::end(kMagic));
  buf.push_back(static_cast<char>(array.kind));
  put_u32(buf, static_cast<std::uint32_t>(array.dims.size()));
  for (auto d : array.dims) put_u32(buf, d);
  if (array.kind == ArrayKind::F32) {
    for (float f : array.f32) put_u32(buf, std::bit_cast<std::uint32_t>(f));
  } else {
    buf.insert(buf.end(), array.u8.begin(), array.u8.end());
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path.string(), "cannot open for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError(path.string(), "write failed");
}

RawArray read_raw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string(), "cannot open for reading");
  const std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                       std::istreambuf_iterator<char>());
  if (buf.size() < 9) throw IoError(path.string(), "truncated header");
  if (std::memcmp(buf.data(), kMagic, 4) != 0) throw IoError(path.string(), "bad magic");

  RawArray array;
  const unsigned char kind = buf[4];
  if (kind > 1) throw IoError(path.string(), "unknown kind tag " + std::to_string(kind));
  array.kind = static_cast<ArrayKind>(kind);

  const std::uint32_t rank = get_u32(&buf[5]);
  std::size_t pos = 9;
  if (rank > 3 || buf.size() < pos + 4ULL * rank) throw IoError(path.string(), "bad dims");
  for (std::uint32_t i = 0; i < rank; ++i, pos += 4) array.dims.push_back(get_u32(&buf[pos]));

  const std::size_t n = array.element_count();
  const std::size_t width = array.kind == ArrayKind::F32 ? 4 : 1;
  if (buf.size() - pos != n * width) {
    throw IoError(path.string(), buf.size() - pos < n * width ? "truncated payload"
                                                              : "trailing bytes after payload");
  }
  if (array.kind == ArrayKind::F32) {
    array.f32.resize(n);
    for (std::size_t i = 0; i < n; ++i, pos += 4) {
      array.f32[i] = std::bit_cast<float>(get_u32(&buf[pos]));
    }
  } else {
    array.u8.assign(buf.begin() + static_cast<std::ptrdiff_t>(pos), buf.end());
  }
  return array;
}

void tensor_write(const std::filesystem::path& path, const ImageTensor& image) {
  RawArray array;
  array.kind = ArrayKind::F32;
  array.dims = {static_cast<std::uint32_t>(image.height()), static_cast<std::uint32_t>(image.width()),
                static_cast<std::uint32_t>(image.channels())};
  array.f32.assign(image.data().begin(), image.data().end());
  write_raw(path, array);
}

void tensor_write(const std::filesystem::path& path, const BinaryMask& mask) {
  RawArray array;
  array.kind = ArrayKind::U8;
  array.dims = {static_cast<std::uint32_t>(mask.height()), static_cast<std::uint32_t>(mask.width())};
  array.u8.assign(mask.data().begin(), mask.data().end());
  write_raw(path, array);
}

Tensor tensor_read(const std::filesystem::path& path) {
  RawArray array = read_raw(path);
  try {
    if (array.kind == ArrayKind::F32) {
      if (array.dims.size() != 3) throw IoError(path.string(), "image file must have rank 3");
      std::vector<double> data(array.f32.begin(), array.f32.end());
      return ImageTensor(array.dims[0], array.dims[1], array.dims[2], std::move(data));
    }
    if (array.dims.size() != 2) throw IoError(path.string(), "mask file must have rank 2");
    for (auto b : array.u8) {
      if (b > 1) throw IoError(path.string(), "invalid mask byte " + std::to_string(b));
    }
    return BinaryMask(array.dims[0], array.dims[1], std::move(array.u8));
  } catch (const IoError&) {
    throw;
  } catch (const Error& e) {
    throw IoError(path.string(), e.what());
  }
}

ImageTensor read_image(const std::filesystem::path& path) {
  auto t = tensor_read(path);
  if (auto* img = std::get_if<ImageTensor>(&t)) return std::move(*img);
  throw IoError(path.string(), "expected an image file, found a mask");
}

BinaryMask read_mask(const std::filesystem::path& path) {
  auto t = tensor_read(path);
  if (auto* m = std::get_if<BinaryMask>(&t)) return std::move(*m);
  throw IoError(path.string(), "expected a mask file, found an image");
}

}  // namespace mcpmix
