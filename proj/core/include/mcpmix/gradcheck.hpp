#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mcpmix {

struct GradCheckOptions {
  std::uint64_t seed = 0;
  double step = 1e-6;
  double tolerance = 1e-5;
  /// Denominator floor of the relative error, so that coordinates whose true
  /// gradient is near zero are judged on absolute error instead.
  double floor = 1e-4;
  int gate_configs = 20;
  /// Test hook: perturbs one analytic coordinate of every suite.
  bool corrupt = false;
};

struct GradCheckResult {
  std::string suite;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  /// Description of the coordinate with the largest error.
  std::string worst;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;

  bool passed(double tolerance) const { return max_rel_error < tolerance; }
};

/// |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double floor);

/// Every parameter of a small random model on a 6x6x1 image.
GradCheckResult check_segnet_params(const GradCheckOptions& opt);
/// Ten random pixels of a 6x6x1 image.
GradCheckResult check_segnet_input(const GradCheckOptions& opt);
/// Every pixel of up to four 8x8x1 images through the frozen extractor and MMD.
GradCheckResult check_mmd_input(const GradCheckOptions& opt);
/// d/dpsi and d/dzeta of the end-to-end batch objective on random
/// desk-scale configurations (64x64x3, batch 4).
GradCheckResult check_gate_gradients(const GradCheckOptions& opt);

/// All four suites in the order above.
std::vector<GradCheckResult> run_gradcheck(const GradCheckOptions& opt);

}  // namespace mcpmix
