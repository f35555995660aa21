#include "mcpmix/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include <fmt/format.h>

#include "mcpmix/featspace.hpp"
#include "mcpmix/rla.hpp"
#include "mcpmix/segnet.hpp"
#include "mcpmix/synthgen.hpp"
#include "mcpmix/trainloop.hpp"

namespace mcpmix {

namespace {

constexpr double kCorruption = 1e-2;

struct Tracker {
  GradCheckResult res;
  double floor;
  bool corrupt;

  void add(double analytic, double numeric, const std::string& where) {
    if (corrupt && res.checked == 0) analytic += kCorruption * std::max(std::abs(analytic), 1.0);
    const double e = relative_error(analytic, numeric, floor);
    if (res.checked == 0 || e > res.max_rel_error) {
      res.max_rel_error = e;
      res.worst = where;
      res.worst_analytic = analytic;
      res.worst_numeric = numeric;
    }
    ++res.checked;
  }
};

Tracker make_tracker(const std::string& suite, const GradCheckOptions& opt) {
  Tracker t{GradCheckResult{}, opt.floor, opt.corrupt};
  t.res.suite = suite;
  return t;
}

double central(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

ImageTensor random_image(std::size_t h, std::size_t w, std::size_t c, Rng& rng, double lo, double hi) {
  std::vector<double> v(h * w * c);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return ImageTensor(h, w, c, std::move(v));
}

BinaryMask random_mask(std::size_t h, std::size_t w, Rng& rng) {
  std::vector<std::uint8_t> v(h * w);
  for (auto& x : v) x = rng.uniform() < 0.4 ? 1 : 0;
  return BinaryMask(h, w, std::move(v));
}

ImageTensor with_value(const ImageTensor& img, std::size_t index, double value) {
  std::vector<double> v(img.data().begin(), img.data().end());
  v[index] = value;
  return ImageTensor(img.height(), img.width(), img.channels(), std::move(v));
}

}  // namespace

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckResult check_segnet_params(const GradCheckOptions& opt) {
  Tracker tr = make_tracker("segnet_params", opt);
  Rng rng(rng_child({opt.seed, 0x5E6}, 0));
  const SegModel model = SegModel::random(1, 4, rng_child({opt.seed, 0x5E6}, 1));
  const ImageTensor img = random_image(6, 6, 1, rng, 0.0, 1.0);
  const BinaryMask mask = random_mask(6, 6, rng);
  const auto analytic = backward(model, img, mask).grads.params;
  const auto params = model.params();
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto f = [&](double v) {
      std::vector<double> p(params.begin(), params.end());
      p[k] = v;
      return bce_loss(forward(SegModel(1, 4, std::move(p)), img), mask);
    };
    tr.add(analytic[k], central(f, params[k], opt.step), fmt::format("param {}", k));
  }
  return tr.res;
}

GradCheckResult check_segnet_input(const GradCheckOptions& opt) {
  Tracker tr = make_tracker("segnet_input", opt);
  Rng rng(rng_child({opt.seed, 0x5E7}, 0));
  const SegModel model = SegModel::random(1, 4, rng_child({opt.seed, 0x5E7}, 1));
  const ImageTensor img = random_image(6, 6, 1, rng, 0.1, 0.9);
  const BinaryMask mask = random_mask(6, 6, rng);
  const auto analytic = backward(model, img, mask).grads.input.data;
  for (int n = 0; n < 10; ++n) {
    const std::size_t k = rng.below(img.size());
    auto f = [&](double v) { return bce_loss(forward(model, with_value(img, k, v)), mask); };
    tr.add(analytic[k], central(f, img.data()[k], opt.step), fmt::format("pixel {}", k));
  }
  return tr.res;
}

GradCheckResult check_mmd_input(const GradCheckOptions& opt) {
  Tracker tr = make_tracker("mmd_input", opt);
  Rng rng(rng_child({opt.seed, 0x33D}, 0));
  const FrozenExtractor ex({1, 4, 2, 8, 16}, rng_child({opt.seed, 0x33D}, 1));
  const std::size_t n = 2 + rng.below(3);
  std::vector<ImageTensor> xs, ys;
  for (std::size_t i = 0; i < n; ++i) xs.push_back(random_image(8, 8, 1, rng, 0.05, 0.95));
  for (std::size_t i = 0; i < n; ++i) ys.push_back(random_image(8, 8, 1, rng, 0.05, 0.95));
  const double bw = median_bandwidth(extract(ex, ys));
  const auto g = mmd_input_gradient(xs, ys, ex, bw);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < xs[i].size(); ++k) {
      auto f = [&](double v) {
        auto pert = xs;
        pert[i] = with_value(xs[i], k, v);
        return mmd(extract(ex, pert), extract(ex, ys), bw);
      };
      tr.add(g.grad_x[i].data[k], central(f, xs[i].data()[k], opt.step),
             fmt::format("image {} pixel {}", i, k));
    }
  }
  return tr.res;
}

GradCheckResult check_gate_gradients(const GradCheckOptions& opt) {
  Tracker tr = make_tracker("gate_gradients", opt);
  GenConfig gen;
  const FrozenExtractor ex({3, 4, 4, 16, 64}, {opt.seed, 0xFEA7});
  for (int c = 0; c < opt.gate_configs; ++c) {
    const RngStream cs = rng_child({opt.seed, 0x6A7E}, static_cast<std::uint64_t>(c));
    Rng rng(rng_child(cs, 0));
    std::vector<PairedTriplet> batch;
    for (int i = 0; i < 4; ++i) batch.push_back(generate_triplet(gen, rng_child(cs, 10 + i)));
    const SegModel model = SegModel::random(3, 8, rng_child(cs, 1));
    std::vector<ImageTensor> reals;
    for (const auto& t : batch) reals.push_back(t.real);
    const double bw = median_bandwidth(extract(ex, reals));

    RlaConfig cfg;
    cfg.total_epochs = 60;
    cfg.mu = rng.uniform(0.5, 2.0);
    cfg.lambda_rho = rng.uniform(1e-4, 1e-1);
    cfg.lambda_s = rng.uniform(1e-4, 1e-1);
    const double t = rng.uniform(0.0, 60.0);
    GateState g{rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0), cfg.rho_max, cfg.s_max};
    // Half the configurations put the hinge in its active region. Keep
    // D - tau away from the kink so the finite difference stays one-sided.
    cfg.tau0 = 0.0;
    const double d0 = rla_batch_objective(model, ex, bw, batch, g, cfg, t).d;
    const double decay = cosine_decay(t, cfg.total_epochs);
    const bool active = c % 2 == 0;
    cfg.tau0 = decay > 0.0 ? (active ? 0.5 * d0 : 4.0 * d0 + 1.0) / decay : 0.0;

    const auto out = rla_batch(model, ex, bw, batch, g, cfg, t);
    auto f_psi = [&](double v) {
      GateState p = g;
      p.psi = v;
      return rla_batch_objective(model, ex, bw, batch, p, cfg, t).total;
    };
    auto f_zeta = [&](double v) {
      GateState p = g;
      p.zeta = v;
      return rla_batch_objective(model, ex, bw, batch, p, cfg, t).total;
    };
    tr.add(out.gate_grads.d_psi, central(f_psi, g.psi, opt.step), fmt::format("config {} psi", c));
    tr.add(out.gate_grads.d_zeta, central(f_zeta, g.zeta, opt.step), fmt::format("config {} zeta", c));
  }
  return tr.res;
}

std::vector<GradCheckResult> run_gradcheck(const GradCheckOptions& opt) {
  return {check_segnet_params(opt), check_segnet_input(opt), check_mmd_input(opt),
          check_gate_gradients(opt)};
}

}  // namespace mcpmix
