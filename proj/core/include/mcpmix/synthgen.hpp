#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mcpmix/rng.hpp"
#include "mcpmix/tensor.hpp"

namespace mcpmix {

/// Real image, synthetic counterpart and the mask both share.
struct PairedTriplet {
  ImageTensor real;
  ImageTensor synthetic;
  BinaryMask mask;
};

/// Throws ShapeError unless real/synthetic/mask agree in spatial shape and
/// the two images agree in channel count.
void check_triplet(const PairedTriplet& t);

struct GenConfig {
  std::size_t size = 64;
  std::size_t channels = 3;
  int lesions_min = 1;
  int lesions_max = 3;
  double radius_min = 6.0;
  double radius_max = 16.0;
  /// Appearance divergence of the synthetic counterpart, 0 = identical.
  double strength = 0.5;
  /// Std-dev of the per-pixel Gaussian noise.
  double noise = 0.02;
  double min_foreground = 0.02;
  double max_foreground = 0.6;

  /// Throws ConfigError.
  void validate() const;

  friend bool operator==(const GenConfig&, const GenConfig&) = default;
};

void to_json(nlohmann::json& j, const GenConfig& cfg);
void from_json(const nlohmann::json& j, GenConfig& cfg);

/// Lesion mask: union of 1-3 ellipses with low-frequency radial
/// perturbation, redrawn until the foreground fraction is in range.
BinaryMask generate_mask(const GenConfig& cfg, const RngStream& stream);

/// Renders the real-domain appearance for `mask`.
ImageTensor render_real(const BinaryMask& mask, const GenConfig& cfg, const RngStream& stream);

/// Draws a fresh synthetic counterpart of `real` under the same mask:
/// clamp(real + strength * (alt - real)), where `alt` is rendered with an
/// independent, palette-rotated appearance. strength == 0 returns `real`.
ImageTensor synthesize_counterpart(const ImageTensor& real, const BinaryMask& mask,
                                   const GenConfig& cfg, const RngStream& stream);

PairedTriplet generate_triplet(const GenConfig& cfg, const RngStream& stream);

struct ManifestItem {
  std::string real;
  std::string synthetic;
  std::string mask;
};

/// Dataset index. Item paths are relative to the manifest's directory.
struct DatasetManifest {
  std::uint64_t seed = 0;
  GenConfig config;
  std::vector<ManifestItem> items;
  /// Directory the manifest was loaded from; not serialized.
  std::filesystem::path base_dir;

  PairedTriplet load_item(std::size_t index) const;
  std::vector<PairedTriplet> load_all() const;
};

nlohmann::json manifest_to_json(const DatasetManifest& m);
DatasetManifest load_manifest(const std::filesystem::path& path);

inline constexpr const char* kManifestFileName = "manifest.json";

/// Writes n triplets plus manifest.json into out_dir (created if missing).
/// Deterministic in (cfg, n, seed).
DatasetManifest generate_dataset(const GenConfig& cfg, std::size_t n, std::uint64_t seed,
                                 const std::filesystem::path& out_dir);

}  // namespace mcpmix
