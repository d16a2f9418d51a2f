#pragma once

#include <cstdint>
#include <span>

#include "r2au/tensor.hpp"

namespace r2au {

/// Raised when a metric is undefined for its input (e.g. AUC of a
/// single-class target).
class MetricError : public Error {
 public:
  using Error::Error;
};

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

struct ScalarMetrics {
  double dice = 0;
  double precision = 0;
  double recall = 0;
  double accuracy = 0;
  double cohen_kappa = 0;
};

/// Pixel counts of binary prediction vs binary target. Throws ShapeError on
/// length mismatch and ArgumentError on values outside {0, 1}.
template <typename T>
ConfusionCounts confusion(std::span<const T> pred_binary, std::span<const T> target_binary);
template <typename T>
ConfusionCounts confusion(const Tensor<T>& pred_binary, const Tensor<T>& target_binary);

/// 2TP / (2TP + FP + FN), 1 for an empty denominator.
double dice_from_counts(const ConfusionCounts& c);

/// Precision, recall and dice are 1 when their denominator is zero and the
/// complementary error count is zero too, otherwise 0. Kappa is 1 when chance
/// agreement and observed agreement are both 1. Requires total > 0.
ScalarMetrics scalar_metrics(const ConfusionCounts& c);

/// Mann-Whitney statistic: probability that a random positive pixel outscores
/// a random negative one, ties counted 1/2. Throws MetricError when the target
/// lacks either class.
template <typename T>
double roc_auc(std::span<const T> scores, std::span<const T> target_binary);

}  // namespace r2au
