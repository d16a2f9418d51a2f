#pragma once

#include <functional>
#include <string>
#include <vector>

#include "r2au/gradcheck.hpp"

namespace r2au {

/// Worst finite-difference disagreement of one check over all seeds.
struct CheckResult {
  std::string name;
  double max_error = 0;
  double tolerance = 0;
  std::size_t coordinates = 0;
  std::size_t skipped = 0;  // coordinates the difference quotient could not resolve
  // Gradients at the worst coordinate.
  double worst_analytic = 0;
  double worst_numeric = 0;
  bool passed() const { return max_error < tolerance; }
};

struct SuiteOptions {
  std::size_t seeds = 10;
  std::uint64_t first_seed = 0;
  double step = 1e-5;
  double tolerance = 1e-5;
  // End-to-end model check.
  std::size_t depth = 2;
  std::size_t base_channels = 2;
  std::size_t size = 16;
  double model_tolerance = 1e-4;
  std::size_t model_coords_per_tensor = 12;
};

/// 64-bit gradient checks of every differentiable op, block and loss, plus an
/// end-to-end model. Each op's scalar objective is a fixed random projection
/// sum(r * out), which keeps every output coordinate in play. Coordinates
/// where the difference quotient is unstable are reported, not scored.
std::vector<CheckResult> run_gradient_suite(const SuiteOptions& options = {},
                                            const std::function<void(const CheckResult&)>& on_result = {});

}  // namespace r2au
