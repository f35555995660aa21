#pragma once

#include <cstdint>
#include <filesystem>
#include <variant>
#include <vector>

#include "mcpmix/tensor.hpp"

namespace mcpmix {

// MCPT file layout (all integers little-endian):
//   "MCPT" | kind:u8 | rank:u32 | dims:u32[rank] | payload
// kind 0 = f32 payload, kind 1 = u8 payload. Images are written with
// rank 3 (h, w, c), masks with rank 2 (h, w).

enum class ArrayKind : std::uint8_t { F32 = 0, U8 = 1 };

/// Unvalidated array as stored on disk. Used directly for checkpoint
/// weights, which are not confined to [0,1].
struct RawArray {
  ArrayKind kind = ArrayKind::F32;
  std::vector<std::uint32_t> dims;
  std::vector<float> f32;
  std::vector<std::uint8_t> u8;

  std::size_t element_count() const;
};

void write_raw(const std::filesystem::path& path, const RawArray& array);
RawArray read_raw(const std::filesystem::path& path);

using Tensor = std::variant<ImageTensor, BinaryMask>;

/// Writes an image (values rounded to f32) or a mask.
void tensor_write(const std::filesystem::path& path, const ImageTensor& image);
void tensor_write(const std::filesystem::path& path, const BinaryMask& mask);

/// Inverse of tensor_write. Throws IoError on bad magic, truncated or
/// oversized payload, wrong rank, or a mask byte outside {0,1}.
Tensor tensor_read(const std::filesystem::path& path);

ImageTensor read_image(const std::filesystem::path& path);
BinaryMask read_mask(const std::filesystem::path& path);

}  // namespace mcpmix
