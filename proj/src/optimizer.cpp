#include <cmath>

#include "r2au/training.hpp"

namespace r2au {

void NadamConfig::validate() const {
  if (!(lr > 0)) throw ArgumentError("optimizer.lr must be > 0");
  if (!(decay >= 0)) throw ArgumentError("optimizer.decay must be >= 0");
  if (!(beta1 > 0 && beta1 < 1)) throw ArgumentError("optimizer.beta1 must lie in (0, 1)");
  if (!(beta2 > 0 && beta2 < 1)) throw ArgumentError("optimizer.beta2 must lie in (0, 1)");
  if (!(eps > 0)) throw ArgumentError("optimizer.eps must be > 0");
}

void PlateauConfig::validate() const {
  if (patience == 0) throw ArgumentError("plateau.patience must be >= 1");
  if (!(factor > 0 && factor < 1)) throw ArgumentError("plateau.factor must lie in (0, 1)");
  if (!(min_lr >= 0)) throw ArgumentError("plateau.min_lr must be >= 0");
}

template <typename T>
void nadam_step(std::vector<std::pair<std::string, Var<T>>>& params, OptimizerState<T>& state, double lr) {
  if (state.m.empty()) {
    for (const auto& [name, p] : params) {
      state.m.emplace_back(p.shape());
      state.v.emplace_back(p.shape());
    }
  }
  if (state.m.size() != params.size()) throw ArgumentError("nadam_step: parameter list changed between steps");
  for (const auto& [name, p] : params) {
    if (p.has_grad() && !p.grad().all_finite()) throw TrainingError("non-finite gradient in parameter '" + name + "'");
  }

  const NadamConfig& c = state.config;
  const std::uint64_t t = ++state.step;
  const double td = static_cast<double>(t);
  const double mom_next = 1.0 - std::pow(c.beta1, td + 1.0);
  const double mom_now = 1.0 - std::pow(c.beta1, td);
  const double var_now = 1.0 - std::pow(c.beta2, td);

  for (std::size_t k = 0; k < params.size(); ++k) {
    Var<T>& p = params[k].second;
    Tensor<T>& m = state.m[k];
    Tensor<T>& v = state.v[k];
    if (m.shape() != p.shape()) throw ShapeError("nadam_step: moment shape differs for '" + params[k].first + "'");
    const bool has = p.has_grad();
    const T* g = has ? p.grad().data() : nullptr;
    T* w = p.mutable_value().data();
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double gi = has ? static_cast<double>(g[i]) : 0.0;
      const double mi = c.beta1 * static_cast<double>(m[i]) + (1.0 - c.beta1) * gi;
      const double vi = c.beta2 * static_cast<double>(v[i]) + (1.0 - c.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double m_hat = c.beta1 * mi / mom_next + (1.0 - c.beta1) * gi / mom_now;
      const double v_hat = vi / var_now;
      w[i] = static_cast<T>(static_cast<double>(w[i]) - lr * m_hat / (std::sqrt(v_hat) + c.eps));
    }
  }
}

template void nadam_step<float>(std::vector<std::pair<std::string, Var<float>>>&, OptimizerState<float>&, double);
template void nadam_step<double>(std::vector<std::pair<std::string, Var<double>>>&, OptimizerState<double>&, double);

LrSchedule::LrSchedule(double lr0, double decay, PlateauConfig plateau)
    : lr0_(lr0), decay_(decay), plateau_(plateau) {
  if (!(lr0 > 0) || !(decay >= 0)) throw ArgumentError("LrSchedule: need lr0 > 0 and decay >= 0");
  plateau_.validate();
}

double LrSchedule::lr(std::size_t epoch) const {
  return scale_ * lr0_ / (1.0 + decay_ * static_cast<double>(epoch));
}

bool LrSchedule::observe(double metric) {
  if (metric > best_) {
    best_ = metric;
    wait_ = 0;
    return false;
  }
  if (++wait_ < plateau_.patience) return false;
  wait_ = 0;
  const double floor_scale = plateau_.min_lr / lr0_;
  const double next = std::max(scale_ * plateau_.factor, floor_scale);
  if (next >= scale_) return false;
  scale_ = next;
  ++reductions_;
  return true;
}

}  // namespace r2au
