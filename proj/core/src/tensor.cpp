#include "mcpmix/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "mcpmix/error.hpp"

namespace mcpmix {

namespace {

void check_length(std::size_t expected, std::size_t actual, const char* what) {
  if (expected != actual) {
    throw ShapeError(std::string(what) + ": data length " + std::to_string(actual) +
                     " does not match shape product " + std::to_string(expected));
  }
}

void check_unit_range(std::span<const double> data, const char* what) {
  for (double v : data) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      throw DomainError(std::string(what) + ": element outside [0,1]: " + std::to_string(v));
    }
  }
}

}  // namespace

ImageTensor::ImageTensor(std::size_t height, std::size_t width, std::size_t channels)
    : height_(height), width_(width), channels_(channels),
      data_(height * width * channels, 0.0) {}

ImageTensor::ImageTensor(std::size_t height, std::size_t width, std::size_t channels,
                         std::vector<double> data)
    : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
  check_length(height * width * channels, data_.size(), "ImageTensor");
  check_unit_range(data_, "ImageTensor");
}

ImageTensor ImageTensor::clamped(std::size_t height, std::size_t width,
                                 std::size_t channels, std::vector<double> data) {
  for (double& v : data) {
    if (!std::isfinite(v)) throw DomainError("ImageTensor: non-finite element");
    v = std::clamp(v, 0.0, 1.0);
  }
  return ImageTensor(height, width, channels, std::move(data));
}

BinaryMask::BinaryMask(std::size_t height, std::size_t width)
    : height_(height), width_(width), data_(height * width, 0) {}

BinaryMask::BinaryMask(std::size_t height, std::size_t width, std::vector<std::uint8_t> data)
    : height_(height), width_(width), data_(std::move(data)) {
  check_length(height * width, data_.size(), "BinaryMask");
  for (auto v : data_) {
    if (v > 1) throw DomainError("BinaryMask: element not in {0,1}: " + std::to_string(v));
  }
}

std::size_t BinaryMask::foreground_count() const noexcept {
  return std::accumulate(data_.begin(), data_.end(), std::size_t{0});
}

SoftMask::SoftMask(std::size_t height, std::size_t width, std::vector<double> data)
    : height_(height), width_(width), data_(std::move(data)) {
  check_length(height * width, data_.size(), "SoftMask");
  check_unit_range(data_, "SoftMask");
}

SoftMask SoftMask::from_binary(const BinaryMask& mask) {
  std::vector<double> data(mask.data().begin(), mask.data().end());
  return SoftMask(mask.height(), mask.width(), std::move(data));
}

BinaryMask SoftMask::threshold(double threshold) const {
  std::vector<std::uint8_t> out(data_.size());
  std::transform(data_.begin(), data_.end(), out.begin(),
                 [threshold](double p) { return static_cast<std::uint8_t>(p >= threshold); });
  return BinaryMask(height_, width_, std::move(out));
}

double dot_difference(const ImageGrad& grad, const ImageTensor& a, const ImageTensor& b) {
  if (!a.same_shape(b) || grad.height != a.height() || grad.width != a.width() ||
      grad.channels != a.channels()) {
    throw ShapeError("dot_difference: shape mismatch");
  }
  const auto pa = a.data();
  const auto pb = b.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < pa.size(); ++i) acc += grad.data[i] * (pb[i] - pa[i]);
  return acc;
}

}  // namespace mcpmix
