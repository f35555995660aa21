#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace mcpmix {

/// H x W x C grid of intensities in [0,1], row-major and channel-last.
///
/// Values are held as doubles; on disk they are stored as 32-bit floats.
/// Instances are immutable once constructed.
class ImageTensor {
 public:
  ImageTensor() = default;

  /// Zero-filled image.
  ImageTensor(std::size_t height, std::size_t width, std::size_t channels);

  /// Validates length and range; throws ShapeError / DomainError.
  ImageTensor(std::size_t height, std::size_t width, std::size_t channels,
              std::vector<double> data);

  /// Like the validating constructor, but clamps every element into [0,1]
  /// first. Non-finite input still throws.
  static ImageTensor clamped(std::size_t height, std::size_t width,
                             std::size_t channels, std::vector<double> data);

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t channels() const noexcept { return channels_; }
  std::size_t pixels() const noexcept { return height_ * width_; }
  std::size_t size() const noexcept { return data_.size(); }

  double at(std::size_t row, std::size_t col, std::size_t ch) const {
    return data_[(row * width_ + col) * channels_ + ch];
  }
  std::span<const double> data() const noexcept { return data_; }

  bool same_shape(const ImageTensor& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_ &&
           channels_ == other.channels_;
  }

  friend bool operator==(const ImageTensor&, const ImageTensor&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t channels_ = 0;
  std::vector<double> data_;
};

/// H x W hard label grid; every element is exactly 0 or 1.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(std::size_t height, std::size_t width);
  BinaryMask(std::size_t height, std::size_t width, std::vector<std::uint8_t> data);

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }

  std::uint8_t at(std::size_t row, std::size_t col) const {
    return data_[row * width_ + col];
  }
  std::span<const std::uint8_t> data() const noexcept { return data_; }

  std::size_t foreground_count() const noexcept;
  bool empty_foreground() const noexcept { return foreground_count() == 0; }

  bool same_shape(const BinaryMask& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_;
  }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<std::uint8_t> data_;
};

/// H x W grid of values in [0,1]: predicted probability maps and the
/// fractional labels of classical mixup.
class SoftMask {
 public:
  SoftMask() = default;
  SoftMask(std::size_t height, std::size_t width, std::vector<double> data);

  static SoftMask from_binary(const BinaryMask& mask);

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }

  double at(std::size_t row, std::size_t col) const { return data_[row * width_ + col]; }
  std::span<const double> data() const noexcept { return data_; }

  /// Hard threshold; values >= threshold become foreground.
  BinaryMask threshold(double threshold) const;

  friend bool operator==(const SoftMask&, const SoftMask&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<double> data_;
};

/// Gradient with respect to an image: same shape, unconstrained values.
struct ImageGrad {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<double> data;

  static ImageGrad zeros_like(const ImageTensor& image) {
    return {image.height(), image.width(), image.channels(),
            std::vector<double>(image.size(), 0.0)};
  }
};

/// Flat inner product <grad, b - a>, accumulated in index order.
double dot_difference(const ImageGrad& grad, const ImageTensor& a, const ImageTensor& b);

}  // namespace mcpmix
