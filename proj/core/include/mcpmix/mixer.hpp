#pragma once

#include <cstddef>
#include <utility>

#include "mcpmix/synthgen.hpp"
#include "mcpmix/tensor.hpp"

namespace mcpmix {

/// MCPMix output: the appearance-mixed image and the untouched hard label.
struct MixedSample {
  ImageTensor image;
  BinaryMask label;
  double weight = 0.0;
};

/// image = (1 - s) * real + s * synthetic, label = t.mask.
/// Throws DomainError if s is outside [0,1].
MixedSample mcpmix(const PairedTriplet& t, double s);

/// Pixelwise convex combination of two same-shaped images.
ImageTensor blend(const ImageTensor& a, const ImageTensor& b, double weight_b);

/// Classical mixup: lambda * a + (1 - lambda) * b for both image and label,
/// so labels become fractional wherever the masks disagree.
std::pair<ImageTensor, SoftMask> classical_mixup(const ImageTensor& image_a, const BinaryMask& mask_a,
                                                 const ImageTensor& image_b, const BinaryMask& mask_b,
                                                 double lambda);

/// Half-open axis-aligned rectangle [row, row + rows) x [col, col + cols).
struct Rect {
  std::size_t row = 0;
  std::size_t col = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
};

/// Copy-and-paste baseline: pixels and labels inside `rect` come from b.
std::pair<ImageTensor, BinaryMask> cutpaste_mix(const ImageTensor& image_a, const BinaryMask& mask_a,
                                                const ImageTensor& image_b, const BinaryMask& mask_b,
                                                const Rect& rect);

}  // namespace mcpmix
