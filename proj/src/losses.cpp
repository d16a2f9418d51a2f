#include "r2au/losses.hpp"

#include <cmath>
#include <limits>

#include "r2au/metrics.hpp"

namespace r2au {

namespace {

template <typename T>
void require_same_shape(const Shape& pred, const Tensor<T>& target, const char* op) {
  if (pred != target.shape()) {
    throw ShapeError(std::string(op) + ": prediction " + to_string(pred) + " vs target " +
                     to_string(target.shape()));
  }
}

template <typename T>
void require_binary(const Tensor<T>& target, const char* op) {
  for (T v : target.values()) {
    if (v != T{0} && v != T{1}) throw ArgumentError(std::string(op) + ": target must be binary {0, 1}");
  }
}

template <typename T>
Tensor<T> complement(const Tensor<T>& t) {
  Tensor<T> out(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = T{1} - t[i];
  return out;
}

template <typename T>
T total(const Tensor<T>& t) {
  T acc = 0;
  for (T v : t.values()) acc += v;
  return acc;
}

}  // namespace

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::wbce: return "wbce";
    case LossKind::dice: return "dice";
    case LossKind::bce_dice: return "bce_dice";
    case LossKind::tversky: return "tversky";
    case LossKind::focal_tversky: return "focal_tversky";
  }
  return "unknown";
}

LossKind parse_loss_kind(const std::string& name) {
  for (LossKind k : {LossKind::wbce, LossKind::dice, LossKind::bce_dice, LossKind::tversky,
                     LossKind::focal_tversky}) {
    if (to_string(k) == name) return k;
  }
  throw ArgumentError("unknown loss kind '" + name + "'");
}

void LossConfig::validate() const {
  if (!(wbce_weight > 0.0 && wbce_weight < 1.0)) throw ArgumentError("loss.wbce_weight must lie in (0, 1)");
  if (!(alpha >= 0.0)) throw ArgumentError("loss.alpha must be >= 0");
  if (!(beta >= 0.0)) throw ArgumentError("loss.beta must be >= 0");
  if (!(gamma > 0.0)) throw ArgumentError("loss.gamma must be > 0");
  if (!(eps > 0.0)) throw ArgumentError("loss.eps must be > 0");
  if (!(prob_clip > 0.0 && prob_clip < 0.5)) throw ArgumentError("loss.prob_clip must lie in (0, 0.5)");
  if ((kind == LossKind::tversky || kind == LossKind::focal_tversky) && std::abs(alpha + beta - 1.0) > 1e-9) {
    throw ArgumentError("loss.alpha + loss.beta must equal 1 for Tversky losses");
  }
}

template <typename T>
Var<T> wbce(const Var<T>& pred, const Tensor<T>& target, T weight, T prob_clip) {
  require_same_shape(pred.shape(), target, "wbce");
  require_binary(target, "wbce");
  const Var<T> p = clamp(pred, prob_clip, T{1} - prob_clip);
  const Var<T> pos = weight * mul(constant(target), log(p));
  const Var<T> neg = (T{1} - weight) * mul(constant(complement(target)), log(T{1} - p));
  return affine(mean(add(pos, neg)), T{-1}, T{0});
}

template <typename T>
Var<T> bce(const Var<T>& pred, const Tensor<T>& target, T prob_clip) {
  return affine(wbce(pred, target, T(0.5), prob_clip), T{2}, T{0});
}

template <typename T>
Var<T> dice_loss2(const Var<T>& pred, const Tensor<T>& target, T eps) {
  require_same_shape(pred.shape(), target, "dice_loss2");
  const T n = static_cast<T>(target.size());
  const T sum_g = total(target);
  const Var<T> sum_p = sum(pred);
  const Var<T> fg_num = affine(sum(mul(pred, constant(target))), T{2}, eps);
  const Var<T> fg_den = affine(sum_p, T{1}, sum_g + eps);
  const Var<T> bg_num = affine(sum(mul(T{1} - pred, constant(complement(target)))), T{2}, eps);
  const Var<T> bg_den = affine(sum_p, T{-1}, T{2} * n - sum_g + eps);
  return T{2} - add(div(fg_num, fg_den), div(bg_num, bg_den));
}

template <typename T>
double dice_coefficient(const Tensor<T>& pred_binary, const Tensor<T>& target) {
  return dice_from_counts(confusion(pred_binary, target));
}

template <typename T>
Var<T> tversky_index(const Var<T>& p0, const Tensor<T>& g0, T alpha, T beta, T eps) {
  require_same_shape(p0.shape(), g0, "tversky_index");
  const Var<T> tp = sum(mul(p0, constant(g0)));
  const Var<T> fp = sum(mul(p0, constant(complement(g0))));
  const Var<T> fn = sum(mul(T{1} - p0, constant(g0)));
  const Var<T> den = add(add(tp, alpha * fp), affine(fn, beta, eps));
  return div(tp, den);
}

template <typename T>
Tensor<T> TverskyGradient<T>::total() const {
  Tensor<T> out(d_p0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = d_p0[i] - d_p1[i];
  return out;
}

template <typename T>
TverskyGradient<T> tversky_grad(const Tensor<T>& p0, const Tensor<T>& g0, T alpha, T beta) {
  if (p0.shape() != g0.shape()) {
    throw ShapeError("tversky_grad: " + to_string(p0.shape()) + " vs " + to_string(g0.shape()));
  }
  T s = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < p0.size(); ++i) {
    const T g1 = T{1} - g0[i];
    const T p1 = T{1} - p0[i];
    s += p0[i] * g0[i];
    fp += p0[i] * g1;
    fn += p1 * g0[i];
  }
  const T den = s + alpha * fp + beta * fn;
  const T den2 = den * den;
  TverskyGradient<T> out{Tensor<T>(p0.shape()), Tensor<T>(p0.shape())};
  for (std::size_t j = 0; j < p0.size(); ++j) {
    const T g1 = T{1} - g0[j];
    out.d_p0[j] = (g0[j] * den - (g0[j] + alpha * g1) * s) / den2;
    out.d_p1[j] = -beta * g0[j] * s / den2;
  }
  return out;
}

template <typename T>
Var<T> focal_tversky(const Var<T>& p0, const Tensor<T>& g0, T alpha, T beta, T gamma, T eps) {
  if (!(gamma > T{0})) throw ArgumentError("focal_tversky: gamma must be > 0");
  const Var<T> gap = T{1} - tversky_index(p0, g0, alpha, beta, eps);
  return pow(clamp(gap, T(1e-7), std::numeric_limits<T>::max()), gamma);
}

template <typename T>
Var<T> bce_dice(const Var<T>& pred, const Tensor<T>& target, T eps, T prob_clip) {
  return add(bce(pred, target, prob_clip), dice_loss2(pred, target, eps));
}

template <typename T>
Var<T> compute_loss(const LossConfig& cfg, const Var<T>& pred, const Tensor<T>& target) {
  const T eps = static_cast<T>(cfg.eps);
  const T clip = static_cast<T>(cfg.prob_clip);
  switch (cfg.kind) {
    case LossKind::wbce: return wbce(pred, target, static_cast<T>(cfg.wbce_weight), clip);
    case LossKind::dice: return dice_loss2(pred, target, eps);
    case LossKind::bce_dice: return bce_dice(pred, target, eps, clip);
    case LossKind::tversky:
      return T{1} - tversky_index(pred, target, static_cast<T>(cfg.alpha), static_cast<T>(cfg.beta), eps);
    case LossKind::focal_tversky:
      return focal_tversky(pred, target, static_cast<T>(cfg.alpha), static_cast<T>(cfg.beta),
                           static_cast<T>(cfg.gamma), eps);
  }
  throw ArgumentError("compute_loss: unknown loss kind");
}

#define R2AU_INSTANTIATE_LOSSES(T)                                                          \
  template Var<T> wbce<T>(const Var<T>&, const Tensor<T>&, T, T);                           \
  template Var<T> bce<T>(const Var<T>&, const Tensor<T>&, T);                               \
  template Var<T> dice_loss2<T>(const Var<T>&, const Tensor<T>&, T);                        \
  template double dice_coefficient<T>(const Tensor<T>&, const Tensor<T>&);                  \
  template Var<T> tversky_index<T>(const Var<T>&, const Tensor<T>&, T, T, T);               \
  template struct TverskyGradient<T>;                                                       \
  template TverskyGradient<T> tversky_grad<T>(const Tensor<T>&, const Tensor<T>&, T, T);    \
  template Var<T> focal_tversky<T>(const Var<T>&, const Tensor<T>&, T, T, T, T);            \
  template Var<T> bce_dice<T>(const Var<T>&, const Tensor<T>&, T, T);                       \
  template Var<T> compute_loss<T>(const LossConfig&, const Var<T>&, const Tensor<T>&);

R2AU_INSTANTIATE_LOSSES(float)
R2AU_INSTANTIATE_LOSSES(double)

}  // namespace r2au
