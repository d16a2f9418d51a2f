#pragma once

#include <string>

#include "r2au/ops.hpp"

namespace r2au {

enum class LossKind { wbce, dice, bce_dice, tversky, focal_tversky };

std::string to_string(LossKind kind);
/// Accepts the names produced by to_string; throws ArgumentError otherwise.
LossKind parse_loss_kind(const std::string& name);

struct LossConfig {
  LossKind kind = LossKind::focal_tversky;
  double wbce_weight = 0.5;  // class weight of the positive term in weighted BCE
  double alpha = 0.3;        // Tversky false-positive weight
  double beta = 0.7;         // Tversky false-negative weight
  double gamma = 0.75;       // focal exponent
  double eps = 1e-6;
  double prob_clip = 1e-7;

  /// Throws ArgumentError. Tversky kinds require alpha + beta == 1.
  void validate() const;
  friend bool operator==(const LossConfig&, const LossConfig&) = default;
};

// All losses reduce over every element of the batch (pooled). Targets are
// binary {0, 1} tensors of the prediction's shape.

/// mean of -[w y log p + (1 - w)(1 - y) log(1 - p)], p clipped to
/// [clip, 1 - clip]. Throws ArgumentError for non-binary targets.
template <typename T>
Var<T> wbce(const Var<T>& pred, const Tensor<T>& target, T weight, T prob_clip = T(1e-7));

/// Standard binary cross-entropy: 2 * wbce(weight = 0.5).
template <typename T>
Var<T> bce(const Var<T>& pred, const Tensor<T>& target, T prob_clip = T(1e-7));

/// Two-class soft Dice loss:
///   2 - [(2 sum p g + eps) / (sum p + sum g + eps)
///        + (2 sum (1-p)(1-g) + eps) / (sum (2 - p - g) + eps)]
template <typename T>
Var<T> dice_loss2(const Var<T>& pred, const Tensor<T>& target, T eps = T(1e-6));

/// 2TP / (2TP + FP + FN) on binary masks; 1 when both are empty.
template <typename T>
double dice_coefficient(const Tensor<T>& pred_binary, const Tensor<T>& target);

/// TI = sum p0 g0 / (sum p0 g0 + alpha sum p0 g1 + beta sum p1 g0 + eps),
/// with p1 = 1 - p0 and g1 = 1 - g0.
template <typename T>
Var<T> tversky_index(const Var<T>& p0, const Tensor<T>& g0, T alpha, T beta, T eps = T(1e-6));

/// Closed-form partials of the (eps-free) Tversky index, treating p0 and p1
/// as independent inputs.
template <typename T>
struct TverskyGradient {
  Tensor<T> d_p0;  // dT/dp0_j
  Tensor<T> d_p1;  // dT/dp1_j
  /// Total derivative along p1 = 1 - p0: d_p0 - d_p1.
  Tensor<T> total() const;
};

template <typename T>
TverskyGradient<T> tversky_grad(const Tensor<T>& p0, const Tensor<T>& g0, T alpha, T beta);

/// (1 - TI)^gamma with (1 - TI) clamped below at 1e-7.
template <typename T>
Var<T> focal_tversky(const Var<T>& p0, const Tensor<T>& g0, T alpha, T beta, T gamma, T eps = T(1e-6));

/// bce + dice_loss2.
template <typename T>
Var<T> bce_dice(const Var<T>& pred, const Tensor<T>& target, T eps = T(1e-6), T prob_clip = T(1e-7));

/// Dispatches on cfg.kind. Tversky kind yields 1 - TI.
template <typename T>
Var<T> compute_loss(const LossConfig& cfg, const Var<T>& pred, const Tensor<T>& target);

}  // namespace r2au
