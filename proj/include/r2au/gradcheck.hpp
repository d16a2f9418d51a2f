#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "r2au/autodiff.hpp"

namespace r2au {

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
  /// Input index and flat element of the worst coordinate.
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  /// Coordinates where the difference quotient could not be resolved.
  std::size_t skipped = 0;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences (f(x+h) - f(x-h)) / 2h, one coordinate at a time.
///
/// `f` reads the current values of `inputs` (leaves requiring grad) and returns
/// a scalar. Relative error per coordinate is |a - n| / max(|a|, |n|, 1e-8).
/// When `max_coords_per_input` is nonzero, larger inputs are checked on a
/// random subset of that many coordinates drawn with `seed`.
///
/// With `skip_nonsmooth`, each coordinate is also differenced at step/4; if the
/// two estimates disagree by more than `smooth_tol` (relative), the difference
/// quotient itself is unreliable there (a ReLU or max-pool kink inside the
/// stencil, or roundoff swamping a near-zero derivative). Such a coordinate is
/// counted in `skipped` instead of being scored. A wrong analytic gradient
/// still fails: both estimates agree with each other, not with it.
/// Throws EvaluationError if f produces a non-finite value.
GradCheckReport grad_check(const std::function<Var<double>()>& f, const std::vector<Var<double>>& inputs,
                           double step = 1e-5, std::size_t max_coords_per_input = 0, std::uint64_t seed = 0,
                           bool skip_nonsmooth = false, double smooth_tol = 1e-3);

/// Single-input convenience form; returns the max relative error.
double grad_check(const std::function<Var<double>(const Var<double>&)>& f, const Tensor<double>& x,
                  double step = 1e-5);

}  // namespace r2au
