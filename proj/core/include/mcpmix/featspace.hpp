#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mcpmix/rng.hpp"
#include "mcpmix/tensor.hpp"

namespace mcpmix {

/// n x d matrix of feature rows, row-major.
struct FeatureCloud {
  std::size_t n = 0;
  std::size_t d = 0;
  std::vector<double> rows;

  std::span<const double> row(std::size_t i) const { return {rows.data() + i * d, d}; }
};

struct ExtractorConfig {
  std::size_t channels = 3;
  std::size_t patch = 4;
  std::size_t stride = 4;
  std::size_t hidden = 16;
  std::size_t dim = 64;
};

/// Frozen random feature map standing in for a pretrained backbone.
///
/// Patch convolution (patch x patch, stride) -> tanh -> 1x1 projection ->
/// tanh -> global average pool. Inputs are centred at 0.5. Weights are
/// drawn once from the construction stream and never change.
class FrozenExtractor {
 public:
  FrozenExtractor(const ExtractorConfig& cfg, const RngStream& stream);

  const ExtractorConfig& config() const noexcept { return cfg_; }

  /// One feature row. Throws ShapeError if the image is incompatible.
  std::vector<double> features(const ImageTensor& image) const;

  /// Gradient of <upstream, features(image)> with respect to the image.
  ImageGrad backward(const ImageTensor& image, std::span<const double> upstream) const;

 private:
  void check(const ImageTensor& image) const;

  ExtractorConfig cfg_;
  std::vector<double> conv_w_;  // [hidden][patch][patch][channels]
  std::vector<double> conv_b_;  // [hidden]
  std::vector<double> proj_w_;  // [dim][hidden]
  std::vector<double> proj_b_;  // [dim]
};

/// One row per image, in batch order.
FeatureCloud extract(const FrozenExtractor& extractor, std::span<const ImageTensor> batch);

/// Biased (V-statistic) squared MMD with a Gaussian RBF kernel
/// k(u,v) = exp(-|u-v|^2 / (2 sigma^2)).
double mmd_squared(const FeatureCloud& x, const FeatureCloud& y, double bandwidth);

/// sqrt(max(mmd_squared, 0)).
double mmd(const FeatureCloud& x, const FeatureCloud& y, double bandwidth);

struct MmdGradient {
  double value = 0.0;
  /// dD/dx_image for every image in the x batch.
  std::vector<ImageGrad> grad_x;
};

/// D = MMD(phi(x_images), phi(y_images)) and its exact gradient with
/// respect to the x images. At D == 0 the gradient is defined as zero.
MmdGradient mmd_input_gradient(std::span<const ImageTensor> x_images,
                               std::span<const ImageTensor> y_images,
                               const FrozenExtractor& extractor, double bandwidth);

/// As mmd_input_gradient, reusing clouds already extracted from x_images
/// and the y batch.
MmdGradient mmd_gradient_from_features(std::span<const ImageTensor> x_images, const FeatureCloud& x,
                                       const FeatureCloud& y, const FrozenExtractor& extractor,
                                       double bandwidth);

/// Median pairwise Euclidean distance between rows; 1.0 when fewer than two
/// rows or when every pair coincides.
double median_bandwidth(const FeatureCloud& cloud);

/// Euclidean distance between the column means of two clouds.
double centroid_distance(const FeatureCloud& x, const FeatureCloud& y);

}  // namespace mcpmix
