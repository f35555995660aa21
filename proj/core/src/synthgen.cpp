#include "mcpmix/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include <fmt/format.h>

#include "mcpmix/error.hpp"
#include "mcpmix/tensor_io.hpp"

namespace mcpmix {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr int kMaxMaskAttempts = 1000;

struct Lesion {
  double cy, cx;
  double a, b;  // semi-axes, px
  double angle;
  double amp[3];
  double phase[3];
};

struct Appearance {
  std::vector<double> background;
  std::vector<double> lesion;
  double tex_amp, tex_fx, tex_fy, tex_phase;
  double lesion_tex_amp, lesion_tex_freq, lesion_tex_phase;
  double illum_gx, illum_gy, illum_gain;
};

Lesion draw_lesion(Rng& rng, const GenConfig& cfg) {
  const double n = static_cast<double>(cfg.size);
  Lesion l{};
  l.cy = rng.uniform(0.2, 0.8) * n;
  l.cx = rng.uniform(0.2, 0.8) * n;
  l.a = rng.uniform(cfg.radius_min, cfg.radius_max);
  l.b = l.a * rng.uniform(0.6, 1.0);
  l.angle = rng.uniform(0.0, std::numbers::pi);
  for (int k = 0; k < 3; ++k) {
    l.amp[k] = rng.uniform(0.0, 0.15);
    l.phase[k] = rng.uniform(0.0, kTwoPi);
  }
  return l;
}

bool inside(const Lesion& l, double y, double x) {
  const double dy = y - l.cy;
  const double dx = x - l.cx;
  const double c = std::cos(l.angle);
  const double s = std::sin(l.angle);
  const double u = (c * dx + s * dy) / l.a;
  const double v = (-s * dx + c * dy) / l.b;
  const double rho = std::hypot(u, v);
  const double phi = std::atan2(v, u);
  double limit = 1.0;
  for (int k = 0; k < 3; ++k) limit += l.amp[k] * std::cos((k + 2) * phi + l.phase[k]);
  return rho <= limit;
}

Appearance draw_appearance(Rng& rng, std::size_t channels) {
  Appearance a;
  a.background.resize(channels);
  a.lesion.resize(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    a.background[c] = c == 0 ? rng.uniform(0.55, 0.75) : rng.uniform(0.35, 0.6);
    double contrast;
    if (channels == 1) {
      contrast = -rng.uniform(0.15, 0.3);
    } else {
      contrast = c == 0 ? rng.uniform(0.05, 0.15) : -rng.uniform(0.12, 0.25);
    }
    a.lesion[c] = a.background[c] + contrast;
  }
  a.tex_amp = rng.uniform(0.02, 0.06);
  a.tex_fx = rng.uniform(0.03, 0.15);
  a.tex_fy = rng.uniform(0.03, 0.15);
  a.tex_phase = rng.uniform(0.0, kTwoPi);
  a.lesion_tex_amp = rng.uniform(0.01, 0.04);
  a.lesion_tex_freq = rng.uniform(0.15, 0.3);
  a.lesion_tex_phase = rng.uniform(0.0, kTwoPi);
  a.illum_gx = rng.uniform(-0.15, 0.15);
  a.illum_gy = rng.uniform(-0.15, 0.15);
  a.illum_gain = rng.uniform(0.9, 1.1);
  return a;
}

// Global palette shift of the synthetic domain: hue rotation about the
// gray axis for RGB, per-channel gain/offset otherwise.
void shift_palette(Appearance& a, Rng& rng) {
  const std::size_t channels = a.background.size();
  if (channels == 3) {
    const double theta = rng.uniform(0.4, 1.0);
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    const double k = 1.0 / std::sqrt(3.0);
    // Rodrigues rotation about (1,1,1)/sqrt(3), centred on mid-gray.
    const double m[3][3] = {
        {c + (1 - c) / 3, (1 - c) / 3 - k * s, (1 - c) / 3 + k * s},
        {(1 - c) / 3 + k * s, c + (1 - c) / 3, (1 - c) / 3 - k * s},
        {(1 - c) / 3 - k * s, (1 - c) / 3 + k * s, c + (1 - c) / 3},
    };
    for (auto* color : {&a.background, &a.lesion}) {
      std::vector<double> out(3);
      for (int i = 0; i < 3; ++i) {
        out[i] = 0.5;
        for (int j = 0; j < 3; ++j) out[i] += m[i][j] * ((*color)[j] - 0.5);
      }
      *color = out;
    }
  } else {
    for (std::size_t ch = 0; ch < channels; ++ch) {
      const double gain = rng.uniform(0.75, 0.9);
      const double offset = rng.uniform(0.05, 0.12);
      a.background[ch] = a.background[ch] * gain + offset;
      a.lesion[ch] = a.lesion[ch] * gain + offset;
    }
  }
}

std::vector<double> render(const BinaryMask& mask, std::size_t channels, const Appearance& a,
                           double noise, Rng& rng) {
  const std::size_t h = mask.height();
  const std::size_t w = mask.width();
  std::vector<double> out(h * w * channels);
  const double dh = h > 1 ? static_cast<double>(h - 1) : 1.0;
  const double dw = w > 1 ? static_cast<double>(w - 1) : 1.0;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double u = static_cast<double>(x) / dw - 0.5;
      const double v = static_cast<double>(y) / dh - 0.5;
      const double illum = a.illum_gain * (1.0 + a.illum_gx * u + a.illum_gy * v);
      const bool fg = mask.at(y, x) != 0;
      double tex = a.tex_amp * std::sin(kTwoPi * (a.tex_fx * x + a.tex_fy * y) + a.tex_phase);
      if (fg) {
        tex += a.lesion_tex_amp *
               std::sin(kTwoPi * a.lesion_tex_freq * (x + y) + a.lesion_tex_phase);
      }
      const auto& base = fg ? a.lesion : a.background;
      for (std::size_t c = 0; c < channels; ++c) {
        double val = base[c] * illum + tex;
        if (noise > 0.0) val += noise * rng.normal();
        out[(y * w + x) * channels + c] = std::clamp(val, 0.0, 1.0);
      }
    }
  }
  return out;
}

}  // namespace

void check_triplet(const PairedTriplet& t) {
  if (!t.real.same_shape(t.synthetic)) throw ShapeError("triplet: real/synthetic shape mismatch");
  if (t.real.height() != t.mask.height() || t.real.width() != t.mask.width()) {
    throw ShapeError("triplet: image/mask spatial shape mismatch");
  }
}

void GenConfig::validate() const {
  if (size < 4) throw ConfigError("GenConfig: size must be at least 4");
  if (channels < 1) throw ConfigError("GenConfig: channels must be at least 1");
  if (lesions_min < 1 || lesions_max < lesions_min) {
    throw ConfigError("GenConfig: lesion count range is empty");
  }
  if (!(radius_min > 0.0) || radius_max < radius_min) {
    throw ConfigError("GenConfig: lesion radius range is empty");
  }
  if (radius_max >= static_cast<double>(size)) {
    throw ConfigError("GenConfig: lesion radius must be smaller than the image size");
  }
  if (!(strength >= 0.0 && strength <= 1.0)) throw ConfigError("GenConfig: strength not in [0,1]");
  if (!(noise >= 0.0 && noise <= 1.0)) throw ConfigError("GenConfig: noise not in [0,1]");
  if (!(min_foreground >= 0.0 && min_foreground < max_foreground && max_foreground <= 1.0)) {
    throw ConfigError("GenConfig: foreground fraction range is empty");
  }
}

void to_json(nlohmann::json& j, const GenConfig& cfg) {
  j = nlohmann::json{{"size", cfg.size},
                     {"channels", cfg.channels},
                     {"lesions_min", cfg.lesions_min},
                     {"lesions_max", cfg.lesions_max},
                     {"radius_min", cfg.radius_min},
                     {"radius_max", cfg.radius_max},
                     {"strength", cfg.strength},
                     {"noise", cfg.noise},
                     {"min_foreground", cfg.min_foreground},
                     {"max_foreground", cfg.max_foreground}};
}

void from_json(const nlohmann::json& j, GenConfig& cfg) {
  GenConfig d;
  cfg.size = j.value("size", d.size);
  cfg.channels = j.value("channels", d.channels);
  cfg.lesions_min = j.value("lesions_min", d.lesions_min);
  cfg.lesions_max = j.value("lesions_max", d.lesions_max);
  cfg.radius_min = j.value("radius_min", d.radius_min);
  cfg.radius_max = j.value("radius_max", d.radius_max);
  cfg.strength = j.value("strength", d.strength);
  cfg.noise = j.value("noise", d.noise);
  cfg.min_foreground = j.value("min_foreground", d.min_foreground);
  cfg.max_foreground = j.value("max_foreground", d.max_foreground);
}

BinaryMask generate_mask(const GenConfig& cfg, const RngStream& stream) {
  cfg.validate();
  Rng rng(stream);
  const std::size_t n = cfg.size;
  const double total = static_cast<double>(n * n);
  for (int attempt = 0; attempt < kMaxMaskAttempts; ++attempt) {
    const auto count = rng.between(cfg.lesions_min, cfg.lesions_max);
    std::vector<Lesion> lesions;
    for (std::int64_t i = 0; i < count; ++i) lesions.push_back(draw_lesion(rng, cfg));

    std::vector<std::uint8_t> data(n * n, 0);
    std::size_t fg = 0;
    for (std::size_t y = 0; y < n; ++y) {
      for (std::size_t x = 0; x < n; ++x) {
        const bool hit = std::any_of(lesions.begin(), lesions.end(), [&](const Lesion& l) {
          return inside(l, static_cast<double>(y), static_cast<double>(x));
        });
        data[y * n + x] = hit ? 1 : 0;
        fg += hit;
      }
    }
    const double frac = static_cast<double>(fg) / total;
    if (frac >= cfg.min_foreground && frac <= cfg.max_foreground) {
      return BinaryMask(n, n, std::move(data));
    }
  }
  throw ConfigError("generate_mask: could not reach the foreground fraction range");
}

ImageTensor render_real(const BinaryMask& mask, const GenConfig& cfg, const RngStream& stream) {
  Rng rng(stream);
  const Appearance a = draw_appearance(rng, cfg.channels);
  return ImageTensor(mask.height(), mask.width(), cfg.channels,
                     render(mask, cfg.channels, a, cfg.noise, rng));
}

ImageTensor synthesize_counterpart(const ImageTensor& real, const BinaryMask& mask,
                                   const GenConfig& cfg, const RngStream& stream) {
  if (real.height() != mask.height() || real.width() != mask.width()) {
    throw ShapeError("synthesize_counterpart: image/mask shape mismatch");
  }
  if (cfg.strength == 0.0) return real;
  Rng rng(stream);
  Appearance a = draw_appearance(rng, real.channels());
  shift_palette(a, rng);
  const auto alt = render(mask, real.channels(), a, cfg.noise, rng);
  std::vector<double> out(real.size());
  const auto src = real.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::clamp(src[i] + cfg.strength * (alt[i] - src[i]), 0.0, 1.0);
  }
  return ImageTensor(real.height(), real.width(), real.channels(), std::move(out));
}

PairedTriplet generate_triplet(const GenConfig& cfg, const RngStream& stream) {
  cfg.validate();
  const auto streams = rng_split(stream, 3);
  PairedTriplet t;
  t.mask = generate_mask(cfg, streams[0]);
  t.real = render_real(t.mask, cfg, streams[1]);
  t.synthetic = synthesize_counterpart(t.real, t.mask, cfg, streams[2]);
  return t;
}

PairedTriplet DatasetManifest::load_item(std::size_t index) const {
  const auto& item = items.at(index);
  PairedTriplet t{read_image(base_dir / item.real), read_image(base_dir / item.synthetic),
                  read_mask(base_dir / item.mask)};
  check_triplet(t);
  return t;
}

std::vector<PairedTriplet> DatasetManifest::load_all() const {
  std::vector<PairedTriplet> out;
  out.reserve(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) out.push_back(load_item(i));
  return out;
}

nlohmann::json manifest_to_json(const DatasetManifest& m) {
  nlohmann::json items = nlohmann::json::array();
  for (const auto& it : m.items) {
    items.push_back({{"real", it.real}, {"synthetic", it.synthetic}, {"mask", it.mask}});
  }
  return {{"seed", m.seed}, {"config", m.config}, {"items", items}};
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string(), "cannot open manifest");
  DatasetManifest m;
  try {
    const auto j = nlohmann::json::parse(in);
    m.seed = j.at("seed").get<std::uint64_t>();
    m.config = j.at("config").get<GenConfig>();
    for (const auto& it : j.at("items")) {
      m.items.push_back({it.at("real").get<std::string>(), it.at("synthetic").get<std::string>(),
                         it.at("mask").get<std::string>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string(), std::string("malformed manifest: ") + e.what());
  }
  if (m.items.empty()) throw IoError(path.string(), "manifest lists no items");
  m.base_dir = path.parent_path();
  return m;
}

DatasetManifest generate_dataset(const GenConfig& cfg, std::size_t n, std::uint64_t seed,
                                 const std::filesystem::path& out_dir) {
  if (n == 0) throw DomainError("generate_dataset: n must be at least 1");
  cfg.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError(out_dir.string(), "cannot create directory: " + ec.message());

  DatasetManifest m;
  m.seed = seed;
  m.config = cfg;
  m.base_dir = out_dir;
  const auto streams = rng_split(RngStream{seed, 0}, n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto t = generate_triplet(cfg, streams[i]);
    ManifestItem item{fmt::format("real_{:04d}.mcpt", i), fmt::format("synthetic_{:04d}.mcpt", i),
                      fmt::format("mask_{:04d}.mcpt", i)};
    tensor_write(out_dir / item.real, t.real);
    tensor_write(out_dir / item.synthetic, t.synthetic);
    tensor_write(out_dir / item.mask, t.mask);
    m.items.push_back(std::move(item));
  }
  const auto path = out_dir / kManifestFileName;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(path.string(), "cannot open for writing");
  out << manifest_to_json(m).dump(2) << '\n';
  if (!out) throw IoError(path.string(), "write failed");
  return m;
}

}  // namespace mcpmix
