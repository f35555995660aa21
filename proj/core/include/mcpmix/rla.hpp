#pragma once

#include <optional>
#include <string>

#include <nlohmann/json.hpp>

namespace mcpmix {

/// The two learnable gates and their bounds.
///   rho = rho_max * sigmoid(psi)   (loss weight of mixed samples)
///   s   = s_max   * sigmoid(zeta)  (input mixing ratio)
struct GateState {
  double psi = 0.0;
  double zeta = 0.0;
  double rho_max = 0.5;
  double s_max = 0.7;
};

struct RlaConfig {
  /// Hinge threshold at t = 0. Unset means "calibrate from the first epoch".
  std::optional<double> tau0;
  double mu = 1.0;
  double lambda_rho = 1e-3;
  double lambda_s = 1e-3;
  int total_epochs = 60;
  double gate_lr = 0.05;
  double rho_max = 0.5;
  double s_max = 0.7;

  /// Throws ConfigError.
  void validate() const;
};

void to_json(nlohmann::json& j, const RlaConfig& cfg);
void from_json(const nlohmann::json& j, RlaConfig& cfg);

struct LossBreakdown {
  double l_real = 0.0;
  double l_mix = 0.0;
  double d = 0.0;
  double tau = 0.0;
  double rho = 0.0;
  double s = 0.0;
  double penalty = 0.0;
  double prior_rho = 0.0;
  double prior_s = 0.0;
  double total = 0.0;
};

struct GateValues {
  double rho;
  double s;
};

struct PriorValues {
  double rho;
  double s;
};

struct GateGradients {
  double d_psi = 0.0;
  double d_zeta = 0.0;
};

double sigmoid(double x);
/// sigma'(x) = sigma(x) (1 - sigma(x)).
double sigmoid_derivative(double x);

GateValues gate_values(const GateState& g);

/// (1 + cos(pi * min(t, T) / T)) / 2: 1 at t = 0, 0 from t = T on.
double cosine_decay(double t, int total_epochs);

/// tau_t = tau0 * cosine_decay(t, T). Requires cfg.tau0 to be set.
double tau_schedule(const RlaConfig& cfg, double t);

/// Cosine priors for rho and s, scaled by their upper bounds.
PriorValues prior_schedules(const RlaConfig& cfg, double t);

/// (1-rho) L_real + rho L_mix + mu [D - tau]_+ + lambda_rho (rho - rho_prior)^2
///   + lambda_s (s - s_prior)^2, with rho, s from the gates.
/// Throws DomainError on negative or non-finite inputs.
LossBreakdown total_loss(double l_real, double l_mix, double d, double t, const GateState& g,
                         const RlaConfig& cfg);

/// The same objective with rho and s supplied directly instead of through
/// the gates. Fixed baselines hold rho at its prior and take s from a
/// schedule. No input validation.
LossBreakdown assemble_loss(double l_real, double l_mix, double d, double t, double rho, double s,
                            const RlaConfig& cfg);

/// Closed-form partials of total_loss with respect to psi and zeta.
///
/// `mix_loss_input_grad_dot` is <dL_mix/dI_mix, I_s - I_r> and
/// `mmd_input_grad_dot` is <dD/dI_mix, I_s - I_r>, both over the same batch.
/// The hinge term contributes only when d > tau.
GateGradients gate_gradients(double l_real, double l_mix, double d, double t, const GateState& g,
                             const RlaConfig& cfg, double mix_loss_input_grad_dot,
                             double mmd_input_grad_dot);

/// Plain gradient descent on psi and zeta.
GateState gate_step(const GateState& g, const GateGradients& grads, double lr);

enum class FixedSchedule { Stepwise, Cosine };

FixedSchedule parse_fixed_schedule(const std::string& name);

/// Hand-crafted mixing-weight baselines.
///
/// Stepwise runs on a 400-epoch clock (t is rescaled by 400 / T): weight r
/// until epoch 100, then r/7 less at each of 100, 150, ..., 400, reaching 0.
/// Cosine is r * 0.25 * (1 + cos(pi t / T)). Both hold their t = T value
/// afterwards.
double fixed_schedule(FixedSchedule kind, double r, double t, int total_epochs);

}  // namespace mcpmix
