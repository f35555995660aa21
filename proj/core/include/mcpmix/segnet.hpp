#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "mcpmix/rng.hpp"
#include "mcpmix/synthgen.hpp"
#include "mcpmix/tensor.hpp"

namespace mcpmix {

inline constexpr double kBceEpsilon = 1e-7;

/// Two-layer same-padded convolutional scorer:
///   3x3 conv (C -> hidden) -> tanh -> 3x3 conv (hidden -> 1) -> sigmoid.
///
/// All parameters live in one flat vector:
///   conv1 weights [hidden][3][3][C], conv1 bias [hidden],
///   conv2 weights [3][3][hidden],    conv2 bias [1].
class SegModel {
 public:
  static constexpr std::size_t kKernel = 3;

  SegModel() = default;
  /// Zero-initialised model.
  SegModel(std::size_t channels, std::size_t hidden);
  SegModel(std::size_t channels, std::size_t hidden, std::vector<double> params);

  /// Scaled normal weights, zero biases.
  static SegModel random(std::size_t channels, std::size_t hidden, const RngStream& stream);

  std::size_t channels() const noexcept { return channels_; }
  std::size_t hidden() const noexcept { return hidden_; }
  static std::size_t param_count(std::size_t channels, std::size_t hidden);

  std::span<const double> params() const noexcept { return params_; }
  std::span<const double> conv1_weights() const;
  std::span<const double> conv1_bias() const;
  std::span<const double> conv2_weights() const;
  double conv2_bias() const { return params_.back(); }

  friend bool operator==(const SegModel&, const SegModel&) = default;

 private:
  std::size_t channels_ = 0;
  std::size_t hidden_ = 0;
  std::vector<double> params_;
};

struct Gradients {
  /// Mirrors SegModel::params().
  std::vector<double> params;
  /// dL/dI for the input image.
  ImageGrad input;
};

struct BackwardResult {
  double loss = 0.0;
  Gradients grads;
  SoftMask prediction;
};

/// Per-pixel probabilities in (0,1).
SoftMask forward(const SegModel& model, const ImageTensor& image);

/// Pre-sigmoid scores, same layout as forward().
std::vector<double> forward_logits(const SegModel& model, const ImageTensor& image);

/// Mean pixelwise binary cross-entropy with predictions clipped to
/// [kBceEpsilon, 1 - kBceEpsilon]. Soft targets exist for the classical
/// mixup baseline only.
double bce_loss(const SoftMask& pred, const BinaryMask& target);
double bce_loss(const SoftMask& pred, const SoftMask& target);

/// Loss plus exact gradients for every parameter and for the input image.
BackwardResult backward(const SegModel& model, const ImageTensor& image, const BinaryMask& target);
BackwardResult backward(const SegModel& model, const ImageTensor& image, const SoftMask& target);

/// theta <- theta - lr * (grad + weight_decay * theta).
SegModel sgd_step(const SegModel& model, std::span<const double> grads, double lr,
                  double weight_decay);

/// <input gradient, synthetic - real>.
double mix_input_dot(const Gradients& grads, const PairedTriplet& t);

/// Checkpoint directory: model.json header plus one MCPT array per
/// parameter block (stored as f32).
void save_checkpoint(const std::filesystem::path& dir, const SegModel& model, std::uint64_t seed);
SegModel load_checkpoint(const std::filesystem::path& dir);

}  // namespace mcpmix
