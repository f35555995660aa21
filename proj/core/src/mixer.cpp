#include "mcpmix/mixer.hpp"

#include <vector>

#include "mcpmix/error.hpp"

namespace mcpmix {

namespace {

void check_pair(const ImageTensor& image_a, const BinaryMask& mask_a, const ImageTensor& image_b,
                const BinaryMask& mask_b) {
  if (!image_a.same_shape(image_b) || !mask_a.same_shape(mask_b) ||
      image_a.height() != mask_a.height() || image_a.width() != mask_a.width()) {
    throw ShapeError("mix: operand shapes do not match");
  }
}

}  // namespace

ImageTensor blend(const ImageTensor& a, const ImageTensor& b, double weight_b) {
  if (!a.same_shape(b)) throw ShapeError("blend: shape mismatch");
  const auto pa = a.data();
  const auto pb = b.data();
  std::vector<double> out(pa.size());
  const double weight_a = 1.0 - weight_b;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = weight_a * pa[i] + weight_b * pb[i];
  // Rounding can push a convex combination of in-range values an ulp out.
  return ImageTensor::clamped(a.height(), a.width(), a.channels(), std::move(out));
}

MixedSample mcpmix(const PairedTriplet& t, double s) {
  if (!(s >= 0.0 && s <= 1.0)) throw DomainError("mcpmix: mixing weight outside [0,1]");
  check_triplet(t);
  return MixedSample{blend(t.real, t.synthetic, s), t.mask, s};
}

std::pair<ImageTensor, SoftMask> classical_mixup(const ImageTensor& image_a, const BinaryMask& mask_a,
                                                 const ImageTensor& image_b, const BinaryMask& mask_b,
                                                 double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw DomainError("classical_mixup: lambda outside [0,1]");
  check_pair(image_a, mask_a, image_b, mask_b);
  const auto ma = mask_a.data();
  const auto mb = mask_b.data();
  std::vector<double> label(ma.size());
  for (std::size_t i = 0; i < label.size(); ++i) {
    label[i] = lambda * ma[i] + (1.0 - lambda) * mb[i];
  }
  return {blend(image_b, image_a, lambda), SoftMask(mask_a.height(), mask_a.width(), std::move(label))};
}

std::pair<ImageTensor, BinaryMask> cutpaste_mix(const ImageTensor& image_a, const BinaryMask& mask_a,
                                                const ImageTensor& image_b, const BinaryMask& mask_b,
                                                const Rect& rect) {
  check_pair(image_a, mask_a, image_b, mask_b);
  if (rect.row + rect.rows > image_a.height() || rect.col + rect.cols > image_a.width()) {
    throw DomainError("cutpaste_mix: rectangle out of bounds");
  }
  const std::size_t w = image_a.width();
  const std::size_t c = image_a.channels();
  std::vector<double> pixels(image_a.data().begin(), image_a.data().end());
  std::vector<std::uint8_t> labels(mask_a.data().begin(), mask_a.data().end());
  const auto pb = image_b.data();
  for (std::size_t y = rect.row; y < rect.row + rect.rows; ++y) {
    for (std::size_t x = rect.col; x < rect.col + rect.cols; ++x) {
      labels[y * w + x] = mask_b.at(y, x);
      for (std::size_t ch = 0; ch < c; ++ch) pixels[(y * w + x) * c + ch] = pb[(y * w + x) * c + ch];
    }
  }
  return {ImageTensor(image_a.height(), w, c, std::move(pixels)),
          BinaryMask(mask_a.height(), w, std::move(labels))};
}

}  // namespace mcpmix
