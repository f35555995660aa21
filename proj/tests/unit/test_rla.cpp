#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "mcpmix/error.hpp"
#include "mcpmix/gradcheck.hpp"
#include "mcpmix/rla.hpp"
#include "mcpmix/rng.hpp"

using namespace mcpmix;

namespace {

RlaConfig config_with_tau(double tau0, int T = 60) {
  RlaConfig cfg;
  cfg.tau0 = tau0;
  cfg.total_epochs = T;
  return cfg;
}

}  // namespace

TEST(Schedules, TauEndpoints) {
  const auto cfg = config_with_tau(0.8, 60);
  EXPECT_EQ(tau_schedule(cfg, 0.0), 0.8);
  EXPECT_EQ(tau_schedule(cfg, 30.0), 0.4);
  EXPECT_EQ(tau_schedule(cfg, 60.0), 0.0);
  EXPECT_EQ(tau_schedule(cfg, 90.0), 0.0);
  EXPECT_THROW(tau_schedule(RlaConfig{}, 0.0), ConfigError);
}

TEST(Schedules, TauIsNonIncreasing) {
  const auto cfg = config_with_tau(1.0, 37);
  double prev = tau_schedule(cfg, 0.0);
  for (double t = 0.25; t <= 40.0; t += 0.25) {
    const double cur = tau_schedule(cfg, t);
    EXPECT_LE(cur, prev + 1e-15);
    prev = cur;
  }
}

TEST(Gates, MidpointsAtZeroLogits) {
  const GateState g;
  EXPECT_EQ(g.rho_max, 0.5);
  EXPECT_EQ(g.s_max, 0.7);
  const auto v = gate_values(g);
  EXPECT_EQ(v.rho, 0.25);
  EXPECT_EQ(v.s, 0.35);
}

TEST(Gates, StayInsideBoundsForExtremeLogits) {
  for (double x : {-800.0, -30.0, -1.0, 0.0, 1.0, 30.0, 800.0}) {
    const auto v = gate_values(GateState{x, x});
    EXPECT_GE(v.rho, 0.0);
    EXPECT_LE(v.rho, 0.5);
    EXPECT_GE(v.s, 0.0);
    EXPECT_LE(v.s, 0.7);
    EXPECT_TRUE(std::isfinite(sigmoid_derivative(x)));
  }
}

TEST(Schedules, PriorsFollowTheCosine) {
  RlaConfig cfg;
  const auto p0 = prior_schedules(cfg, 0.0);
  EXPECT_EQ(p0.rho, 0.5);
  EXPECT_EQ(p0.s, 0.7);
  const auto pT = prior_schedules(cfg, cfg.total_epochs);
  EXPECT_NEAR(pT.rho, 0.0, 1e-16);
  EXPECT_NEAR(pT.s, 0.0, 1e-16);
}

TEST(FixedSchedules, CosineMatchesClosedFormAtSampledEpochs) {
  const int T = 60;
  const double r = 0.6;
  for (double t : {0.0, 7.0, 15.0, 42.0, 60.0}) {
    EXPECT_EQ(fixed_schedule(FixedSchedule::Cosine, r, t, T),
              r * 0.25 * (1.0 + std::cos(std::numbers::pi * (t / T))))
        << "t " << t;
  }
}

TEST(FixedSchedules, StepwiseOnThe400EpochClock) {
  const double r = 0.7;
  EXPECT_EQ(fixed_schedule(FixedSchedule::Stepwise, r, 0, 400), r);
  EXPECT_EQ(fixed_schedule(FixedSchedule::Stepwise, r, 99, 400), r);
  EXPECT_DOUBLE_EQ(fixed_schedule(FixedSchedule::Stepwise, r, 100, 400), r - r / 7);
  EXPECT_DOUBLE_EQ(fixed_schedule(FixedSchedule::Stepwise, r, 149, 400), r - r / 7);
  EXPECT_DOUBLE_EQ(fixed_schedule(FixedSchedule::Stepwise, r, 150, 400), r - 2 * r / 7);
  EXPECT_NEAR(fixed_schedule(FixedSchedule::Stepwise, r, 399, 400), r / 7, 1e-15);
  EXPECT_EQ(fixed_schedule(FixedSchedule::Stepwise, r, 400, 400), 0.0);
  // A shorter run rescales the clock.
  EXPECT_EQ(fixed_schedule(FixedSchedule::Stepwise, r, 15, 60), fixed_schedule(FixedSchedule::Stepwise, r, 100, 400));
  EXPECT_THROW(fixed_schedule(FixedSchedule::Stepwise, 1.5, 0, 400), DomainError);
  EXPECT_THROW(parse_fixed_schedule("linear"), ConfigError);
  EXPECT_EQ(parse_fixed_schedule("cosine-fixed"), FixedSchedule::Cosine);
}

TEST(TotalLoss, ComposesTheTerms) {
  auto cfg = config_with_tau(0.1);
  cfg.mu = 2.0;
  cfg.lambda_rho = 0.5;
  cfg.lambda_s = 0.25;
  const GateState g;  // rho 0.25, s 0.35; priors at t = 0 are 0.5 and 0.7
  const auto l = total_loss(1.0, 3.0, 0.4, 0.0, g, cfg);
  EXPECT_DOUBLE_EQ(l.penalty, 2.0 * 0.3);
  EXPECT_DOUBLE_EQ(l.prior_rho, 0.5 * 0.25 * 0.25);
  EXPECT_DOUBLE_EQ(l.prior_s, 0.25 * 0.35 * 0.35);
  EXPECT_DOUBLE_EQ(l.total, 0.75 * 1.0 + 0.25 * 3.0 + l.penalty + l.prior_rho + l.prior_s);
}

TEST(TotalLoss, HingeIsInactiveBelowTau) {
  const auto cfg = config_with_tau(1.0);
  EXPECT_EQ(total_loss(1.0, 1.0, 0.5, 0.0, GateState{}, cfg).penalty, 0.0);
  EXPECT_EQ(total_loss(1.0, 1.0, 1.0, 0.0, GateState{}, cfg).penalty, 0.0);
}

TEST(TotalLoss, ValidatesInputs) {
  const auto cfg = config_with_tau(1.0);
  EXPECT_THROW(total_loss(-1.0, 1.0, 0.5, 0.0, GateState{}, cfg), DomainError);
  EXPECT_THROW(total_loss(1.0, std::nan(""), 0.5, 0.0, GateState{}, cfg), DomainError);
  EXPECT_THROW(total_loss(1.0, 1.0, INFINITY, 0.0, GateState{}, cfg), DomainError);
  EXPECT_THROW(total_loss(1.0, 1.0, 0.5, 0.0, GateState{NAN, 0.0}, cfg), DomainError);
}

TEST(RlaConfig, ValidationAndJson) {
  RlaConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.s_max = 1.2;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = RlaConfig{};
  cfg.total_epochs = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);

  auto c = config_with_tau(0.3, 12);
  c.mu = 0.5;
  nlohmann::json j = c;
  const auto back = j.get<RlaConfig>();
  EXPECT_EQ(back.tau0, c.tau0);
  EXPECT_EQ(back.total_epochs, 12);
  EXPECT_EQ(back.mu, 0.5);
  EXPECT_FALSE(nlohmann::json(RlaConfig{}).get<RlaConfig>().tau0.has_value());
}

// Oracle: take L_mix and D affine in s, so the directional dots are the
// slopes, and differentiate total_loss numerically through the gates.
TEST(GateGradients, MatchFiniteDifferencesOfTheScalarObjective) {
  Rng rng({51, 0});
  for (int trial = 0; trial < 200; ++trial) {
    auto cfg = config_with_tau(0.2 + rng.uniform(), 40);
    cfg.lambda_rho = 0.1 * rng.uniform();
    cfg.lambda_s = 0.1 * rng.uniform();
    const double t = rng.uniform(0, 40);
    const GateState g{rng.uniform(-2, 2), rng.uniform(-2, 2)};
    const double l_real = rng.uniform(0.1, 2.0);
    const double a = rng.uniform(0.5, 2.0), b = rng.uniform(-1, 1);
    const double d0 = rng.uniform(0.0, 1.5), c = rng.uniform(0.0, 1.0);
    auto objective = [&](const GateState& gs) {
      const double s = gate_values(gs).s;
      return total_loss(l_real, a + b * s, d0 + c * s, t, gs, cfg).total;
    };
    const double s = gate_values(g).s;
    const double d = d0 + c * s;
    // Keep away from the hinge kink, where the derivative is one-sided.
    if (std::abs(d - tau_schedule(cfg, t)) < 1e-3) continue;
    const auto an = gate_gradients(l_real, a + b * s, d, t, g, cfg, b, c);
    const double h = 1e-6;
    const double num_psi = (objective({g.psi + h, g.zeta}) - objective({g.psi - h, g.zeta})) / (2 * h);
    const double num_zeta = (objective({g.psi, g.zeta + h}) - objective({g.psi, g.zeta - h})) / (2 * h);
    EXPECT_LT(relative_error(an.d_psi, num_psi, 1e-4), 1e-5) << trial;
    EXPECT_LT(relative_error(an.d_zeta, num_zeta, 1e-4), 1e-5) << trial;
  }
}

TEST(GateGradients, HingeTermDropsOutWhenInactive) {
  const auto cfg = config_with_tau(5.0);
  const GateState g;
  const auto with_big_dot = gate_gradients(1.0, 1.0, 0.1, 0.0, g, cfg, 0.0, 100.0);
  const auto without = gate_gradients(1.0, 1.0, 0.1, 0.0, g, cfg, 0.0, 0.0);
  EXPECT_EQ(with_big_dot.d_zeta, without.d_zeta);
}

TEST(GateGradients, GateStepDescends) {
  const GateState g{0.3, -0.2};
  const auto next = gate_step(g, GateGradients{2.0, -1.0}, 0.1);
  EXPECT_DOUBLE_EQ(next.psi, 0.1);
  EXPECT_DOUBLE_EQ(next.zeta, -0.1);
  EXPECT_EQ(next.rho_max, g.rho_max);
}

TEST(GateGradients, EndToEndAgainstFiniteDifferences) {
  const auto r = check_gate_gradients(GradCheckOptions{.seed = 3, .gate_configs = 4});
  EXPECT_EQ(r.checked, 8u);
  EXPECT_LT(r.max_rel_error, 1e-5) << r.worst;
}
