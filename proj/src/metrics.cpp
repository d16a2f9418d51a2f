#include "r2au/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <vector>

namespace r2au {

namespace {

template <typename T>
bool is_one(T v, const char* what) {
  if (v == T{1}) return true;
  if (v == T{0}) return false;
  throw ArgumentError(std::string(what) + " must be binary {0, 1}");
}

double ratio_or_convention(std::uint64_t num, std::uint64_t den, std::uint64_t counterpart) {
  if (den == 0) return counterpart == 0 ? 1.0 : 0.0;
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

template <typename T>
ConfusionCounts confusion(std::span<const T> pred_binary, std::span<const T> target_binary) {
  if (pred_binary.size() != target_binary.size()) {
    throw ShapeError("confusion: prediction has " + std::to_string(pred_binary.size()) +
                     " elements, target has " + std::to_string(target_binary.size()));
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred_binary.size(); ++i) {
    const bool p = is_one(pred_binary[i], "prediction");
    const bool g = is_one(target_binary[i], "target");
    if (p && g) ++c.tp;
    else if (p) ++c.fp;
    else if (g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

template <typename T>
ConfusionCounts confusion(const Tensor<T>& pred_binary, const Tensor<T>& target_binary) {
  if (pred_binary.shape() != target_binary.shape()) {
    throw ShapeError("confusion: shapes " + to_string(pred_binary.shape()) + " and " +
                     to_string(target_binary.shape()) + " differ");
  }
  return confusion(pred_binary.values(), target_binary.values());
}

double dice_from_counts(const ConfusionCounts& c) {
  const std::uint64_t den = 2 * c.tp + c.fp + c.fn;
  if (den == 0) return 1.0;
  return 2.0 * static_cast<double>(c.tp) / static_cast<double>(den);
}

ScalarMetrics scalar_metrics(const ConfusionCounts& c) {
  const std::uint64_t total = c.total();
  if (total == 0) throw MetricError("scalar_metrics: empty confusion counts");
  ScalarMetrics m;
  m.dice = dice_from_counts(c);
  m.precision = ratio_or_convention(c.tp, c.tp + c.fp, c.fn);
  m.recall = ratio_or_convention(c.tp, c.tp + c.fn, c.fp);
  const double n = static_cast<double>(total);
  const double po = static_cast<double>(c.tp + c.tn) / n;
  m.accuracy = po;
  const double pred_pos = static_cast<double>(c.tp + c.fp), pred_neg = static_cast<double>(c.fn + c.tn);
  const double true_pos = static_cast<double>(c.tp + c.fn), true_neg = static_cast<double>(c.fp + c.tn);
  const double pe = (pred_pos * true_pos + pred_neg * true_neg) / (n * n);
  if (pe >= 1.0) {
    m.cohen_kappa = po >= 1.0 ? 1.0 : 0.0;
  } else {
    m.cohen_kappa = (po - pe) / (1.0 - pe);
  }
  return m;
}

template <typename T>
double roc_auc(std::span<const T> scores, std::span<const T> target_binary) {
  if (scores.size() != target_binary.size()) {
    throw ShapeError("roc_auc: " + std::to_string(scores.size()) + " scores vs " +
                     std::to_string(target_binary.size()) + " labels");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Sum of (1-based, tie-averaged) ranks of the positives.
  double positive_rank_sum = 0.0;
  std::uint64_t positives = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (is_one(target_binary[order[k]], "target")) {
        positive_rank_sum += avg_rank;
        ++positives;
      }
    }
    i = j;
  }
  const std::uint64_t negatives = order.size() - positives;
  if (positives == 0 || negatives == 0) {
    throw MetricError("roc_auc: target needs at least one positive and one negative element");
  }
  const double np = static_cast<double>(positives), nn = static_cast<double>(negatives);
  return (positive_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

template ConfusionCounts confusion<float>(std::span<const float>, std::span<const float>);
template ConfusionCounts confusion<double>(std::span<const double>, std::span<const double>);
template ConfusionCounts confusion<float>(const Tensor<float>&, const Tensor<float>&);
template ConfusionCounts confusion<double>(const Tensor<double>&, const Tensor<double>&);
template double roc_auc<float>(std::span<const float>, std::span<const float>);
template double roc_auc<double>(std::span<const double>, std::span<const double>);

}  // namespace r2au
