#include "mcpmix/segnet.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "mcpmix/error.hpp"
#include "mcpmix/rla.hpp"
#include "mcpmix/tensor_io.hpp"

namespace mcpmix {

namespace {

constexpr std::size_t K = SegModel::kKernel;

struct Offsets {
  std::size_t w1, b1, w2, b2, total;
};

Offsets offsets(std::size_t channels, std::size_t hidden) {
  Offsets o{};
  o.w1 = 0;
  o.b1 = hidden * K * K * channels;
  o.w2 = o.b1 + hidden;
  o.b2 = o.w2 + K * K * hidden;
  o.total = o.b2 + 1;
  return o;
}

struct Activations {
  std::vector<double> hidden;  // [h][w][hidden], post-tanh
  std::vector<double> logits;  // [h][w]
};

void check_input(const SegModel& model, const ImageTensor& image) {
  if (model.params().empty()) throw ShapeError("segnet: model is empty");
  if (image.channels() != model.channels()) throw ShapeError("segnet: channel count mismatch");
}

// [hidden][tap][C] -> [tap][C][hidden], so the inner loops run over hidden.
std::vector<double> transpose_conv1(std::span<const double> w1, std::size_t C, std::size_t Hd) {
  std::vector<double> wt(w1.size());
  for (std::size_t k = 0; k < Hd; ++k) {
    for (std::size_t t = 0; t < K * K; ++t) {
      for (std::size_t c = 0; c < C; ++c) wt[(t * C + c) * Hd + k] = w1[(k * K * K + t) * C + c];
    }
  }
  return wt;
}

Activations run_forward(const SegModel& model, const ImageTensor& image) {
  check_input(model, image);
  const std::size_t H = image.height(), W = image.width(), C = image.channels();
  const std::size_t Hd = model.hidden();
  const auto w1 = model.conv1_weights();
  const auto b1 = model.conv1_bias();
  const auto w2 = model.conv2_weights();
  const auto px = image.data();

  const std::vector<double> wt = transpose_conv1(w1, C, Hd);

  Activations act;
  act.hidden.assign(H * W * Hd, 0.0);
  act.logits.assign(H * W, model.conv2_bias());
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      double* out = &act.hidden[(y * W + x) * Hd];
      for (std::size_t k = 0; k < Hd; ++k) out[k] = b1[k];
      for (std::size_t ky = 0; ky < K; ++ky) {
        const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(y + ky) - 1;
        if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(H)) continue;
        for (std::size_t kx = 0; kx < K; ++kx) {
          const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(x + kx) - 1;
          if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(W)) continue;
          const double* src = &px[(static_cast<std::size_t>(yy) * W + static_cast<std::size_t>(xx)) * C];
          const double* wtap = &wt[(ky * K + kx) * C * Hd];
          for (std::size_t c = 0; c < C; ++c) {
            const double v = src[c];
            const double* wc = wtap + c * Hd;
            for (std::size_t k = 0; k < Hd; ++k) out[k] += wc[k] * v;
          }
        }
      }
      for (std::size_t k = 0; k < Hd; ++k) out[k] = std::tanh(out[k]);
    }
  }
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      double acc = 0.0;
      for (std::size_t ky = 0; ky < K; ++ky) {
        const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(y + ky) - 1;
        if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(H)) continue;
        for (std::size_t kx = 0; kx < K; ++kx) {
          const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(x + kx) - 1;
          if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(W)) continue;
          const double* a = &act.hidden[(static_cast<std::size_t>(yy) * W + static_cast<std::size_t>(xx)) * Hd];
          const double* wk = &w2[(ky * K + kx) * Hd];
          for (std::size_t k = 0; k < Hd; ++k) acc += wk[k] * a[k];
        }
      }
      act.logits[y * W + x] += acc;
    }
  }
  return act;
}

double clip_probability(double p) { return std::clamp(p, kBceEpsilon, 1.0 - kBceEpsilon); }

double bce_mean(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size()) throw ShapeError("bce_loss: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double p = clip_probability(pred[i]);
    const double y = target[i];
    acc -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  return acc / static_cast<double>(pred.size());
}

BackwardResult run_backward(const SegModel& model, const ImageTensor& image,
                            std::span<const double> target, std::size_t th, std::size_t tw) {
  if (th != image.height() || tw != image.width()) throw ShapeError("segnet backward: target shape mismatch");
  const Activations act = run_forward(model, image);
  const std::size_t H = image.height(), W = image.width(), C = image.channels();
  const std::size_t Hd = model.hidden();
  const std::size_t N = H * W;
  const Offsets o = offsets(C, Hd);
  const auto w1 = model.conv1_weights();
  const auto w2 = model.conv2_weights();
  const auto px = image.data();

  BackwardResult out;
  std::vector<double> probs(N);
  for (std::size_t i = 0; i < N; ++i) probs[i] = sigmoid(act.logits[i]);
  out.loss = bce_mean(probs, target);

  // d(mean BCE)/d logit = (p - y) / N, zero where the clip is active.
  std::vector<double> d_logit(N);
  for (std::size_t i = 0; i < N; ++i) {
    const bool clipped = probs[i] < kBceEpsilon || probs[i] > 1.0 - kBceEpsilon;
    d_logit[i] = clipped ? 0.0 : (probs[i] - target[i]) / static_cast<double>(N);
  }

  std::vector<double>& g = out.grads.params;
  g.assign(o.total, 0.0);
  std::vector<double> d_hidden(N * Hd, 0.0);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      const double dz = d_logit[y * W + x];
      g[o.b2] += dz;
      for (std::size_t ky = 0; ky < K; ++ky) {
        const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(y + ky) - 1;
        if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(H)) continue;
        for (std::size_t kx = 0; kx < K; ++kx) {
          const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(x + kx) - 1;
          if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(W)) continue;
          const std::size_t src = (static_cast<std::size_t>(yy) * W + static_cast<std::size_t>(xx)) * Hd;
          const std::size_t wo = (ky * K + kx) * Hd;
          for (std::size_t k = 0; k < Hd; ++k) {
            g[o.w2 + wo + k] += dz * act.hidden[src + k];
            d_hidden[src + k] += dz * w2[wo + k];
          }
        }
      }
    }
  }
  for (std::size_t i = 0; i < N * Hd; ++i) {
    const double a = act.hidden[i];
    d_hidden[i] *= 1.0 - a * a;
  }

  out.grads.input = ImageGrad::zeros_like(image);
  auto& gin = out.grads.input.data;
  const std::vector<double> wt = transpose_conv1(w1, C, Hd);
  std::vector<double> gwt(wt.size(), 0.0);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      const double* dz = &d_hidden[(y * W + x) * Hd];
      for (std::size_t k = 0; k < Hd; ++k) g[o.b1 + k] += dz[k];
      for (std::size_t ky = 0; ky < K; ++ky) {
        const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(y + ky) - 1;
        if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(H)) continue;
        for (std::size_t kx = 0; kx < K; ++kx) {
          const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(x + kx) - 1;
          if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(W)) continue;
          const std::size_t src = (static_cast<std::size_t>(yy) * W + static_cast<std::size_t>(xx)) * C;
          const std::size_t tap = (ky * K + kx) * C * Hd;
          for (std::size_t c = 0; c < C; ++c) {
            const double v = px[src + c];
            const double* wc = &wt[tap + c * Hd];
            double* gc = &gwt[tap + c * Hd];
            double acc = 0.0;
            for (std::size_t k = 0; k < Hd; ++k) {
              gc[k] += dz[k] * v;
              acc += dz[k] * wc[k];
            }
            gin[src + c] += acc;
          }
        }
      }
    }
  }
  for (std::size_t k = 0; k < Hd; ++k) {
    for (std::size_t t = 0; t < K * K; ++t) {
      for (std::size_t c = 0; c < C; ++c) g[o.w1 + (k * K * K + t) * C + c] = gwt[(t * C + c) * Hd + k];
    }
  }
  for (auto& p : probs) p = std::clamp(p, 0.0, 1.0);
  out.prediction = SoftMask(H, W, std::move(probs));
  return out;
}

}  // namespace

SegModel::SegModel(std::size_t channels, std::size_t hidden)
    : SegModel(channels, hidden, std::vector<double>(param_count(channels, hidden), 0.0)) {}

SegModel::SegModel(std::size_t channels, std::size_t hidden, std::vector<double> params)
    : channels_(channels), hidden_(hidden), params_(std::move(params)) {
  if (channels == 0 || hidden == 0) throw ShapeError("SegModel: channels and hidden must be positive");
  if (params_.size() != param_count(channels, hidden)) throw ShapeError("SegModel: parameter count mismatch");
  for (double v : params_) {
    if (!std::isfinite(v)) throw DomainError("SegModel: non-finite parameter");
  }
}

std::size_t SegModel::param_count(std::size_t channels, std::size_t hidden) {
  return offsets(channels, hidden).total;
}

SegModel SegModel::random(std::size_t channels, std::size_t hidden, const RngStream& stream) {
  const Offsets o = offsets(channels, hidden);
  std::vector<double> p(o.total, 0.0);
  Rng rng(stream);
  const double s1 = 1.0 / std::sqrt(static_cast<double>(K * K * channels));
  const double s2 = 1.0 / std::sqrt(static_cast<double>(K * K * hidden));
  for (std::size_t i = o.w1; i < o.b1; ++i) p[i] = s1 * rng.normal();
  for (std::size_t i = o.w2; i < o.b2; ++i) p[i] = s2 * rng.normal();
  return SegModel(channels, hidden, std::move(p));
}

std::span<const double> SegModel::conv1_weights() const {
  const Offsets o = offsets(channels_, hidden_);
  return std::span<const double>(params_).subspan(o.w1, o.b1 - o.w1);
}

std::span<const double> SegModel::conv1_bias() const {
  const Offsets o = offsets(channels_, hidden_);
  return std::span<const double>(params_).subspan(o.b1, hidden_);
}

std::span<const double> SegModel::conv2_weights() const {
  const Offsets o = offsets(channels_, hidden_);
  return std::span<const double>(params_).subspan(o.w2, o.b2 - o.w2);
}

std::vector<double> forward_logits(const SegModel& model, const ImageTensor& image) {
  return run_forward(model, image).logits;
}

SoftMask forward(const SegModel& model, const ImageTensor& image) {
  auto logits = forward_logits(model, image);
  for (auto& v : logits) v = sigmoid(v);
  return SoftMask(image.height(), image.width(), std::move(logits));
}

double bce_loss(const SoftMask& pred, const BinaryMask& target) {
  if (pred.height() != target.height() || pred.width() != target.width()) {
    throw ShapeError("bce_loss: shape mismatch");
  }
  const std::vector<double> y(target.data().begin(), target.data().end());
  return bce_mean(pred.data(), y);
}

double bce_loss(const SoftMask& pred, const SoftMask& target) {
  if (pred.height() != target.height() || pred.width() != target.width()) {
    throw ShapeError("bce_loss: shape mismatch");
  }
  return bce_mean(pred.data(), target.data());
}

BackwardResult backward(const SegModel& model, const ImageTensor& image, const BinaryMask& target) {
  const std::vector<double> y(target.data().begin(), target.data().end());
  return run_backward(model, image, y, target.height(), target.width());
}

BackwardResult backward(const SegModel& model, const ImageTensor& image, const SoftMask& target) {
  return run_backward(model, image, target.data(), target.height(), target.width());
}

SegModel sgd_step(const SegModel& model, std::span<const double> grads, double lr, double weight_decay) {
  if (!(lr > 0.0)) throw DomainError("sgd_step: learning rate must be positive");
  if (grads.size() != model.params().size()) throw ShapeError("sgd_step: gradient size mismatch");
  std::vector<double> p(model.params().begin(), model.params().end());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * (grads[i] + weight_decay * p[i]);
  return SegModel(model.channels(), model.hidden(), std::move(p));
}

double mix_input_dot(const Gradients& grads, const PairedTriplet& t) {
  return dot_difference(grads.input, t.real, t.synthetic);
}

void save_checkpoint(const std::filesystem::path& dir, const SegModel& model, std::uint64_t seed) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError(dir.string(), "cannot create directory: " + ec.message());
  const std::size_t C = model.channels(), Hd = model.hidden();
  const Offsets o = offsets(C, Hd);
  const auto p = model.params();

  struct Block {
    const char* file;
    std::vector<std::uint32_t> dims;
    std::size_t begin, end;
  };
  const auto u = [](std::size_t v) { return static_cast<std::uint32_t>(v); };
  const Block blocks[] = {
      {"conv1_weight.mcpt", {u(Hd), u(K * K), u(C)}, o.w1, o.b1},
      {"conv1_bias.mcpt", {u(Hd)}, o.b1, o.w2},
      {"conv2_weight.mcpt", {u(K * K), u(Hd)}, o.w2, o.b2},
      {"conv2_bias.mcpt", {1}, o.b2, o.total},
  };
  nlohmann::json files = nlohmann::json::array();
  for (const auto& b : blocks) {
    RawArray arr;
    arr.kind = ArrayKind::F32;
    arr.dims = b.dims;
    arr.f32.assign(p.begin() + static_cast<std::ptrdiff_t>(b.begin),
                   p.begin() + static_cast<std::ptrdiff_t>(b.end));
    write_raw(dir / b.file, arr);
    files.push_back({{"file", b.file}, {"dims", b.dims}});
  }
  const nlohmann::json header = {{"format", "mcpmix-segnet"},
                                 {"version", 1},
                                 {"channels", C},
                                 {"hidden", Hd},
                                 {"kernel", K},
                                 {"seed", seed},
                                 {"arrays", files}};
  std::ofstream out(dir / "model.json", std::ios::trunc);
  if (!out) throw IoError((dir / "model.json").string(), "cannot open for writing");
  out << header.dump(2) << '\n';
}

SegModel load_checkpoint(const std::filesystem::path& dir) {
  const auto header_path = dir / "model.json";
  std::ifstream in(header_path);
  if (!in) throw IoError(header_path.string(), "cannot open checkpoint header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(header_path.string(), e.what());
  }
  const auto C = header.at("channels").get<std::size_t>();
  const auto Hd = header.at("hidden").get<std::size_t>();
  std::vector<double> params;
  for (const auto& entry : header.at("arrays")) {
    const auto arr = read_raw(dir / entry.at("file").get<std::string>());
    if (arr.kind != ArrayKind::F32) throw IoError(dir.string(), "checkpoint array is not f32");
    params.insert(params.end(), arr.f32.begin(), arr.f32.end());
  }
  if (params.size() != SegModel::param_count(C, Hd)) {
    throw IoError(dir.string(), "checkpoint parameter count does not match header");
  }
  return SegModel(C, Hd, std::move(params));
}

}  // namespace mcpmix
