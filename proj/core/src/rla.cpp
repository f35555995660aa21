#include "mcpmix/rla.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mcpmix/error.hpp"

namespace mcpmix {

namespace {

void require_finite_nonneg(double v, const char* name) {
  if (!std::isfinite(v) || v < 0.0) {
    throw DomainError(std::string("total_loss: ") + name + " must be finite and non-negative");
  }
}

}  // namespace

void RlaConfig::validate() const {
  if (total_epochs < 1) throw ConfigError("RlaConfig: total_epochs must be at least 1");
  if (tau0 && !(*tau0 >= 0.0)) throw ConfigError("RlaConfig: tau0 must be non-negative");
  if (!(mu >= 0.0) || !(lambda_rho >= 0.0) || !(lambda_s >= 0.0)) {
    throw ConfigError("RlaConfig: mu and lambdas must be non-negative");
  }
  if (!(gate_lr >= 0.0)) throw ConfigError("RlaConfig: gate_lr must be non-negative");
  if (!(rho_max >= 0.0 && rho_max <= 1.0) || !(s_max >= 0.0 && s_max <= 1.0)) {
    throw ConfigError("RlaConfig: rho_max and s_max must lie in [0,1]");
  }
}

void to_json(nlohmann::json& j, const RlaConfig& cfg) {
  j = nlohmann::json{{"tau0", cfg.tau0 ? nlohmann::json(*cfg.tau0) : nlohmann::json(nullptr)},
                     {"mu", cfg.mu},
                     {"lambda_rho", cfg.lambda_rho},
                     {"lambda_s", cfg.lambda_s},
                     {"total_epochs", cfg.total_epochs},
                     {"gate_lr", cfg.gate_lr},
                     {"rho_max", cfg.rho_max},
                     {"s_max", cfg.s_max}};
}

void from_json(const nlohmann::json& j, RlaConfig& cfg) {
  RlaConfig d;
  if (j.contains("tau0") && !j.at("tau0").is_null()) {
    cfg.tau0 = j.at("tau0").get<double>();
  } else {
    cfg.tau0.reset();
  }
  cfg.mu = j.value("mu", d.mu);
  cfg.lambda_rho = j.value("lambda_rho", d.lambda_rho);
  cfg.lambda_s = j.value("lambda_s", d.lambda_s);
  cfg.total_epochs = j.value("total_epochs", d.total_epochs);
  cfg.gate_lr = j.value("gate_lr", d.gate_lr);
  cfg.rho_max = j.value("rho_max", d.rho_max);
  cfg.s_max = j.value("s_max", d.s_max);
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double sigmoid_derivative(double x) {
  const double s = sigmoid(x);
  return s * (1.0 - s);
}

GateValues gate_values(const GateState& g) {
  return {g.rho_max * sigmoid(g.psi), g.s_max * sigmoid(g.zeta)};
}

double cosine_decay(double t, int total_epochs) {
  const double T = static_cast<double>(total_epochs);
  const double tc = std::clamp(t, 0.0, T);
  return (1.0 + std::cos(std::numbers::pi * (tc / T))) / 2.0;
}

double tau_schedule(const RlaConfig& cfg, double t) {
  if (!cfg.tau0) throw ConfigError("tau_schedule: tau0 has not been set or calibrated");
  return *cfg.tau0 * cosine_decay(t, cfg.total_epochs);
}

PriorValues prior_schedules(const RlaConfig& cfg, double t) {
  const double c = cosine_decay(t, cfg.total_epochs);
  return {cfg.rho_max * c, cfg.s_max * c};
}

LossBreakdown total_loss(double l_real, double l_mix, double d, double t, const GateState& g,
                         const RlaConfig& cfg) {
  require_finite_nonneg(l_real, "l_real");
  require_finite_nonneg(l_mix, "l_mix");
  require_finite_nonneg(d, "d");
  if (!std::isfinite(g.psi) || !std::isfinite(g.zeta)) throw DomainError("total_loss: non-finite gate");

  const auto gv = gate_values(g);
  return assemble_loss(l_real, l_mix, d, t, gv.rho, gv.s, cfg);
}

LossBreakdown assemble_loss(double l_real, double l_mix, double d, double t, double rho, double s,
                            const RlaConfig& cfg) {
  const auto prior = prior_schedules(cfg, t);
  LossBreakdown out;
  out.l_real = l_real;
  out.l_mix = l_mix;
  out.d = d;
  out.tau = tau_schedule(cfg, t);
  out.rho = rho;
  out.s = s;
  out.penalty = cfg.mu * std::max(0.0, d - out.tau);
  out.prior_rho = cfg.lambda_rho * (rho - prior.rho) * (rho - prior.rho);
  out.prior_s = cfg.lambda_s * (s - prior.s) * (s - prior.s);
  out.total = (1.0 - rho) * l_real + rho * l_mix + out.penalty + out.prior_rho + out.prior_s;
  return out;
}

GateGradients gate_gradients(double l_real, double l_mix, double d, double t, const GateState& g,
                             const RlaConfig& cfg, double mix_loss_input_grad_dot,
                             double mmd_input_grad_dot) {
  for (double v : {l_real, l_mix, d, t, g.psi, g.zeta, mix_loss_input_grad_dot, mmd_input_grad_dot}) {
    if (!std::isfinite(v)) throw DomainError("gate_gradients: non-finite input");
  }
  const auto gv = gate_values(g);
  const auto prior = prior_schedules(cfg, t);
  const double tau = tau_schedule(cfg, t);

  const double dl_drho = -l_real + l_mix + 2.0 * cfg.lambda_rho * (gv.rho - prior.rho);
  const double hinge = d > tau ? 1.0 : 0.0;
  const double dl_ds = gv.rho * mix_loss_input_grad_dot + cfg.mu * hinge * mmd_input_grad_dot +
                       2.0 * cfg.lambda_s * (gv.s - prior.s);
  return {dl_drho * g.rho_max * sigmoid_derivative(g.psi),
          dl_ds * g.s_max * sigmoid_derivative(g.zeta)};
}

GateState gate_step(const GateState& g, const GateGradients& grads, double lr) {
  GateState out = g;
  out.psi -= lr * grads.d_psi;
  out.zeta -= lr * grads.d_zeta;
  return out;
}

FixedSchedule parse_fixed_schedule(const std::string& name) {
  if (name == "stepwise") return FixedSchedule::Stepwise;
  if (name == "cosine" || name == "cosine-fixed") return FixedSchedule::Cosine;
  throw ConfigError("unknown fixed schedule: " + name);
}

double fixed_schedule(FixedSchedule kind, double r, double t, int total_epochs) {
  if (!(r >= 0.0 && r <= 1.0)) throw DomainError("fixed_schedule: r outside [0,1]");
  if (total_epochs < 1) throw DomainError("fixed_schedule: total_epochs must be at least 1");
  const double T = static_cast<double>(total_epochs);
  const double tc = std::clamp(t, 0.0, T);
  switch (kind) {
    case FixedSchedule::Cosine:
      return r * 0.25 * (1.0 + std::cos(std::numbers::pi * (tc / T)));
    case FixedSchedule::Stepwise: {
      const double epoch = tc * 400.0 / T;
      if (epoch < 100.0) return r;
      if (epoch >= 400.0) return 0.0;
      const double cuts = std::floor((epoch - 100.0) / 50.0) + 1.0;
      return std::max(0.0, r - cuts * r / 7.0);
    }
  }
  throw DomainError("fixed_schedule: unknown kind");
}

}  // namespace mcpmix
