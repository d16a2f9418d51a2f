#include "r2au/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace r2au {

namespace {

double evaluate(const std::function<Var<double>()>& f) {
  const Var<double> y = f();
  if (y.value().size() != 1) throw ShapeError("grad_check: function must return a scalar");
  const double v = y.item();
  if (!std::isfinite(v)) throw EvaluationError("grad_check: function value is not finite");
  return v;
}

std::vector<std::size_t> pick_coordinates(std::size_t size, std::size_t limit, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(size);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (limit == 0 || size <= limit) return idx;
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(limit);
  std::sort(idx.begin(), idx.end());
  return idx;
}

double relative_error(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8});
}

}  // namespace

GradCheckReport grad_check(const std::function<Var<double>()>& f, const std::vector<Var<double>>& inputs,
                           double step, std::size_t max_coords_per_input, std::uint64_t seed,
                           bool skip_nonsmooth, double smooth_tol) {
  if (!(step > 0.0)) throw ArgumentError("grad_check: step must be positive");
  for (auto in : inputs) {
    if (!in.requires_grad()) throw ArgumentError("grad_check: inputs must require gradients");
    if (!in.value().all_finite()) throw EvaluationError("grad_check: input is not finite");
    in.zero_grad();
  }

  const Var<double> y = f();
  if (y.value().size() != 1) throw ShapeError("grad_check: function must return a scalar");
  if (!std::isfinite(y.item())) throw EvaluationError("grad_check: function value is not finite");
  y.backward();

  std::vector<Tensor<double>> analytic;
  analytic.reserve(inputs.size());
  for (const auto& in : inputs) analytic.push_back(in.grad());

  GradCheckReport report;
  std::mt19937_64 rng(seed);
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Var<double> in = inputs[k];
    Tensor<double>& x = in.mutable_value();
    for (std::size_t i : pick_coordinates(x.size(), max_coords_per_input, rng)) {
      const double saved = x[i];
      auto central = [&](double h) {
        x[i] = saved + h;
        const double plus = evaluate(f);
        x[i] = saved - h;
        const double minus = evaluate(f);
        x[i] = saved;
        return (plus - minus) / (2.0 * h);
      };
      const double numeric = central(step);
      if (skip_nonsmooth) {
        const double fine = central(step / 4.0);
        if (relative_error(numeric, fine) > smooth_tol) {
          ++report.skipped;
          continue;
        }
      }
      const double a = analytic[k][i];
      const double rel = relative_error(a, numeric);
      ++report.coordinates;
      if (rel > report.max_relative_error || report.coordinates == 1) {
        report.max_relative_error = rel;
        report.worst_input = k;
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

double grad_check(const std::function<Var<double>(const Var<double>&)>& f, const Tensor<double>& x,
                  double step) {
  Var<double> leaf(x, true);
  return grad_check([&] { return f(leaf); }, {leaf}, step).max_relative_error;
}

}  // namespace r2au
