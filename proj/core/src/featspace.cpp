#include "mcpmix/featspace.hpp"

#include <algorithm>
#include <cmath>

#include "mcpmix/error.hpp"

namespace mcpmix {

namespace {

double sq_dist(std::span<const double> u, std::span<const double> v) {
  double acc = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    const double diff = u[k] - v[k];
    acc += diff * diff;
  }
  return acc;
}

double kernel_mean(const FeatureCloud& a, const FeatureCloud& b, double inv_two_sigma_sq) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.n; ++i) {
    for (std::size_t j = 0; j < b.n; ++j) {
      acc += std::exp(-sq_dist(a.row(i), b.row(j)) * inv_two_sigma_sq);
    }
  }
  return acc / static_cast<double>(a.n * b.n);
}

void check_clouds(const FeatureCloud& x, const FeatureCloud& y) {
  if (x.d != y.d) throw ShapeError("feature clouds differ in dimension");
  if (x.n == 0 || y.n == 0) throw ShapeError("feature cloud is empty");
}

}  // namespace

FrozenExtractor::FrozenExtractor(const ExtractorConfig& cfg, const RngStream& stream) : cfg_(cfg) {
  if (cfg.channels == 0 || cfg.patch == 0 || cfg.stride == 0 || cfg.hidden == 0 || cfg.dim == 0) {
    throw ConfigError("FrozenExtractor: every size must be positive");
  }
  Rng rng(stream);
  const std::size_t fan_in = cfg.patch * cfg.patch * cfg.channels;
  const double conv_scale = 2.0 / std::sqrt(static_cast<double>(fan_in));
  conv_w_.resize(cfg.hidden * fan_in);
  for (auto& w : conv_w_) w = conv_scale * rng.normal();
  conv_b_.resize(cfg.hidden);
  for (auto& b : conv_b_) b = 0.1 * rng.normal();
  const double proj_scale = 1.5 / std::sqrt(static_cast<double>(cfg.hidden));
  proj_w_.resize(cfg.dim * cfg.hidden);
  for (auto& w : proj_w_) w = proj_scale * rng.normal();
  proj_b_.resize(cfg.dim);
  for (auto& b : proj_b_) b = 0.1 * rng.normal();
}

void FrozenExtractor::check(const ImageTensor& image) const {
  if (image.channels() != cfg_.channels) throw ShapeError("extractor: channel count mismatch");
  if (image.height() < cfg_.patch || image.width() < cfg_.patch) {
    throw ShapeError("extractor: image smaller than patch");
  }
}

std::vector<double> FrozenExtractor::features(const ImageTensor& image) const {
  check(image);
  const std::size_t p = cfg_.patch, st = cfg_.stride, c = cfg_.channels;
  const std::size_t oh = (image.height() - p) / st + 1;
  const std::size_t ow = (image.width() - p) / st + 1;
  const std::size_t w = image.width();
  const auto px = image.data();

  std::vector<double> pooled(cfg_.dim, 0.0);
  std::vector<double> hidden(cfg_.hidden);
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      for (std::size_t k = 0; k < cfg_.hidden; ++k) {
        double z = conv_b_[k];
        const double* wk = &conv_w_[k * p * p * c];
        for (std::size_t dy = 0; dy < p; ++dy) {
          for (std::size_t dx = 0; dx < p; ++dx) {
            const double* src = &px[((oy * st + dy) * w + ox * st + dx) * c];
            for (std::size_t ch = 0; ch < c; ++ch) z += wk[(dy * p + dx) * c + ch] * (src[ch] - 0.5);
          }
        }
        hidden[k] = std::tanh(z);
      }
      for (std::size_t j = 0; j < cfg_.dim; ++j) {
        double z = proj_b_[j];
        for (std::size_t k = 0; k < cfg_.hidden; ++k) z += proj_w_[j * cfg_.hidden + k] * hidden[k];
        pooled[j] += std::tanh(z);
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(oh * ow);
  for (auto& v : pooled) v *= inv;
  return pooled;
}

ImageGrad FrozenExtractor::backward(const ImageTensor& image, std::span<const double> upstream) const {
  check(image);
  if (upstream.size() != cfg_.dim) throw ShapeError("extractor backward: upstream size mismatch");
  const std::size_t p = cfg_.patch, st = cfg_.stride, c = cfg_.channels;
  const std::size_t oh = (image.height() - p) / st + 1;
  const std::size_t ow = (image.width() - p) / st + 1;
  const std::size_t w = image.width();
  const auto px = image.data();
  const double inv = 1.0 / static_cast<double>(oh * ow);

  ImageGrad grad = ImageGrad::zeros_like(image);
  std::vector<double> hidden(cfg_.hidden);
  std::vector<double> d_hidden(cfg_.hidden);
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      for (std::size_t k = 0; k < cfg_.hidden; ++k) {
        double z = conv_b_[k];
        const double* wk = &conv_w_[k * p * p * c];
        for (std::size_t dy = 0; dy < p; ++dy) {
          for (std::size_t dx = 0; dx < p; ++dx) {
            const double* src = &px[((oy * st + dy) * w + ox * st + dx) * c];
            for (std::size_t ch = 0; ch < c; ++ch) z += wk[(dy * p + dx) * c + ch] * (src[ch] - 0.5);
          }
        }
        hidden[k] = std::tanh(z);
      }
      std::fill(d_hidden.begin(), d_hidden.end(), 0.0);
      for (std::size_t j = 0; j < cfg_.dim; ++j) {
        double z = proj_b_[j];
        for (std::size_t k = 0; k < cfg_.hidden; ++k) z += proj_w_[j * cfg_.hidden + k] * hidden[k];
        const double a = std::tanh(z);
        const double dz = upstream[j] * inv * (1.0 - a * a);
        for (std::size_t k = 0; k < cfg_.hidden; ++k) d_hidden[k] += proj_w_[j * cfg_.hidden + k] * dz;
      }
      for (std::size_t k = 0; k < cfg_.hidden; ++k) {
        const double dz = d_hidden[k] * (1.0 - hidden[k] * hidden[k]);
        const double* wk = &conv_w_[k * p * p * c];
        for (std::size_t dy = 0; dy < p; ++dy) {
          for (std::size_t dx = 0; dx < p; ++dx) {
            double* dst = &grad.data[((oy * st + dy) * w + ox * st + dx) * c];
            for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += wk[(dy * p + dx) * c + ch] * dz;
          }
        }
      }
    }
  }
  return grad;
}

FeatureCloud extract(const FrozenExtractor& extractor, std::span<const ImageTensor> batch) {
  FeatureCloud cloud;
  cloud.n = batch.size();
  cloud.d = extractor.config().dim;
  cloud.rows.reserve(cloud.n * cloud.d);
  for (const auto& image : batch) {
    if (!image.same_shape(batch.front())) throw ShapeError("extract: batch images differ in shape");
    const auto f = extractor.features(image);
    cloud.rows.insert(cloud.rows.end(), f.begin(), f.end());
  }
  return cloud;
}

double mmd_squared(const FeatureCloud& x, const FeatureCloud& y, double bandwidth) {
  check_clouds(x, y);
  if (!(bandwidth > 0.0)) throw DomainError("mmd: bandwidth must be positive");
  const double g = 1.0 / (2.0 * bandwidth * bandwidth);
  return kernel_mean(x, x, g) + kernel_mean(y, y, g) - 2.0 * kernel_mean(x, y, g);
}

double mmd(const FeatureCloud& x, const FeatureCloud& y, double bandwidth) {
  return std::sqrt(std::max(mmd_squared(x, y, bandwidth), 0.0));
}

MmdGradient mmd_input_gradient(std::span<const ImageTensor> x_images,
                               std::span<const ImageTensor> y_images,
                               const FrozenExtractor& extractor, double bandwidth) {
  return mmd_gradient_from_features(x_images, extract(extractor, x_images),
                                    extract(extractor, y_images), extractor, bandwidth);
}

MmdGradient mmd_gradient_from_features(std::span<const ImageTensor> x_images, const FeatureCloud& x,
                                       const FeatureCloud& y, const FrozenExtractor& extractor,
                                       double bandwidth) {
  if (x_images.size() != x.n) throw ShapeError("mmd gradient: image count does not match cloud");
  const double d2 = mmd_squared(x, y, bandwidth);

  MmdGradient out;
  out.value = std::sqrt(std::max(d2, 0.0));
  out.grad_x.reserve(x.n);
  if (!(d2 > 0.0)) {
    for (const auto& img : x_images) out.grad_x.push_back(ImageGrad::zeros_like(img));
    return out;
  }

  // dD2/dx_i = -(2/(n^2 s^2)) sum_j k(x_i,x_j)(x_i-x_j) + (2/(n m s^2)) sum_j k(x_i,y_j)(x_i-y_j)
  const double s2 = bandwidth * bandwidth;
  const double g = 1.0 / (2.0 * s2);
  const double nx = static_cast<double>(x.n);
  const double ny = static_cast<double>(y.n);
  const double chain = 1.0 / (2.0 * out.value);
  std::vector<double> df(x.d);
  for (std::size_t i = 0; i < x.n; ++i) {
    std::fill(df.begin(), df.end(), 0.0);
    const auto xi = x.row(i);
    for (std::size_t j = 0; j < x.n; ++j) {
      const auto xj = x.row(j);
      const double k = std::exp(-sq_dist(xi, xj) * g);
      const double coef = -2.0 * k / (nx * nx * s2);
      for (std::size_t q = 0; q < x.d; ++q) df[q] += coef * (xi[q] - xj[q]);
    }
    for (std::size_t j = 0; j < y.n; ++j) {
      const auto yj = y.row(j);
      const double k = std::exp(-sq_dist(xi, yj) * g);
      const double coef = 2.0 * k / (nx * ny * s2);
      for (std::size_t q = 0; q < x.d; ++q) df[q] += coef * (xi[q] - yj[q]);
    }
    for (auto& v : df) v *= chain;
    out.grad_x.push_back(extractor.backward(x_images[i], df));
  }
  return out;
}

double median_bandwidth(const FeatureCloud& cloud) {
  std::vector<double> dists;
  for (std::size_t i = 0; i < cloud.n; ++i) {
    for (std::size_t j = i + 1; j < cloud.n; ++j) {
      dists.push_back(std::sqrt(sq_dist(cloud.row(i), cloud.row(j))));
    }
  }
  if (dists.empty()) return 1.0;
  std::sort(dists.begin(), dists.end());
  const std::size_t m = dists.size() / 2;
  const double median = dists.size() % 2 == 1 ? dists[m] : 0.5 * (dists[m - 1] + dists[m]);
  return median > 0.0 ? median : 1.0;
}

double centroid_distance(const FeatureCloud& x, const FeatureCloud& y) {
  check_clouds(x, y);
  double acc = 0.0;
  for (std::size_t q = 0; q < x.d; ++q) {
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.n; ++i) mx += x.rows[i * x.d + q];
    for (std::size_t i = 0; i < y.n; ++i) my += y.rows[i * y.d + q];
    const double diff = mx / static_cast<double>(x.n) - my / static_cast<double>(y.n);
    acc += diff * diff;
  }
  return std::sqrt(acc);
}

}  // namespace mcpmix
