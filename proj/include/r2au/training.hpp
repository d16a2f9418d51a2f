#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "r2au/data.hpp"
#include "r2au/losses.hpp"
#include "r2au/metrics.hpp"
#include "r2au/model.hpp"

namespace r2au {

/// Carries where training broke down. epoch/batch are 1-based like the log; batch is
/// unset for failures outside a batch.
class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, std::size_t epoch = 0, std::optional<std::size_t> batch = std::nullopt,
                double value = std::numeric_limits<double>::quiet_NaN())
      : Error(what), epoch(epoch), batch(batch), value(value) {}
  std::size_t epoch;
  std::optional<std::size_t> batch;
  double value;
};

// ---- optimizer -------------------------------------------------------------

struct NadamConfig {
  double lr = 1e-4;
  double decay = 1e-5;  // inverse-time decay per epoch
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
  friend bool operator==(const NadamConfig&, const NadamConfig&) = default;
};

/// Nadam moments for a fixed list of parameters.
template <typename T>
struct OptimizerState {
  NadamConfig config;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::uint64_t step = 0;
};

/// One Nadam update with learning rate `lr`:
///   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
///   m_hat = b1 m / (1 - b1^(t+1)) + (1 - b1) g / (1 - b1^t),  v_hat = v / (1 - b2^t)
///   p <- p - lr m_hat / (sqrt(v_hat) + eps)
/// Parameters without a gradient count as zero gradient. A non-finite
/// gradient throws TrainingError naming the parameter before anything moves.
template <typename T>
void nadam_step(std::vector<std::pair<std::string, Var<T>>>& params, OptimizerState<T>& state, double lr);

// ---- learning-rate schedule ------------------------------------------------

struct PlateauConfig {
  std::size_t patience = 3;
  double factor = 0.5;
  double min_lr = 1e-6;

  void validate() const;
  friend bool operator==(const PlateauConfig&, const PlateauConfig&) = default;
};

/// lr(epoch) = scale * lr0 / (1 + decay * epoch). `scale` shrinks by the
/// plateau factor each time the validation metric goes `patience` epochs
/// without a strict improvement; the shrink never takes lr0 * scale below
/// min_lr.
class LrSchedule {
 public:
  LrSchedule(double lr0, double decay, PlateauConfig plateau);

  double lr(std::size_t epoch) const;
  /// Feeds one epoch's validation metric; true if the plateau rule fired.
  bool observe(double metric);

  double scale() const { return scale_; }
  std::size_t reductions() const { return reductions_; }

 private:
  double lr0_;
  double decay_;
  PlateauConfig plateau_;
  double scale_ = 1.0;
  double best_ = -std::numeric_limits<double>::infinity();
  std::size_t wait_ = 0;
  std::size_t reductions_ = 0;
};

// ---- evaluation ------------------------------------------------------------

struct Evaluation {
  ScalarMetrics metrics;
  double auc = std::numeric_limits<double>::quiet_NaN();
};

/// Pooled: one confusion table over every pixel of every image. Per-image:
/// metrics of each image averaged (AUC over the images where it is defined).
struct EvalReport {
  Evaluation pooled;
  Evaluation per_image;
  std::size_t images = 0;
};

/// Eval-mode forward in batches; masks binarized at `threshold`.
EvalReport evaluate(R2AUNet<float>& model, const std::vector<SamplePair>& samples, double threshold = 0.5,
                    std::size_t batch_size = 4);

// ---- training --------------------------------------------------------------

struct CheckpointConfig {
  std::size_t top_k = 1;
  bool average = false;  // restore the mean of the top_k snapshots instead of the best one

  void validate() const;
  friend bool operator==(const CheckpointConfig&, const CheckpointConfig&) = default;
};

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 4;
  LossConfig loss;
  NadamConfig optimizer;
  PlateauConfig plateau;
  CheckpointConfig checkpoint;
  AugmentConfig augment;
  bool use_augmentation = true;
  double threshold = 0.5;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0;
  Evaluation val;
  double lr = 0;
};

struct CheckpointEntry {
  std::size_t epoch = 0;
  double val_dice = 0;
  std::filesystem::path file;  // empty when nothing is written to disk
  std::vector<Tensor<float>> snapshot;
};

/// The top_k epochs by validation dice; earlier epochs win ties.
struct CheckpointRegistry {
  std::size_t top_k = 1;
  std::vector<CheckpointEntry> entries;  // best first

  /// Inserts if the entry makes the top_k; returns the evicted entry, if any.
  std::optional<CheckpointEntry> offer(CheckpointEntry entry, bool* accepted = nullptr);
  const CheckpointEntry& best() const;
};

struct TrainResult {
  std::vector<EpochRecord> log;
  CheckpointRegistry registry;
  std::size_t optimizer_steps = 0;
  std::size_t best_epoch = 0;
};

struct TrainOptions {
  /// When set: checkpoints and metrics.csv are written here.
  std::optional<std::filesystem::path> out_dir;
  /// Called after every epoch.
  std::function<void(const EpochRecord&)> on_epoch;
};

std::string checkpoint_file_name(std::size_t epoch, double dice);
std::string metric_log_header();
std::string metric_log_row(const EpochRecord& r);

/// Shuffled mini-batch Nadam training with per-epoch validation. The model
/// ends up holding the best checkpoint (or the top_k average).
TrainResult train(R2AUNet<float>& model, const std::vector<SamplePair>& train_set,
                  const std::vector<SamplePair>& val_set, const TrainConfig& cfg, std::uint64_t seed,
                  const TrainOptions& options = {});

/// Writes `text` to a temporary sibling, then renames it over `path`.
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

// ---- ablation --------------------------------------------------------------

/// The 19 loss configurations of the published grid, in table order.
std::vector<LossConfig> table1_grid();

struct AblationRow {
  std::string dataset;
  std::string model_variant;
  LossConfig loss;
  Evaluation eval;
  std::string error;  // empty on success
};

struct AblationOptions {
  std::string dataset = "synthetic";
  /// Runs only these grid indices when non-empty.
  std::vector<std::size_t> subset;
  std::function<void(const AblationRow&)> on_row;
};

std::string ablation_csv_header();
std::string ablation_csv_row(const AblationRow& r);

/// Trains one model per grid entry from the same seed and budget and scores
/// it on `test_set`. A failing configuration yields a row with NaN metrics
/// and the error text; the grid carries on.
std::vector<AblationRow> ablation_grid(const std::vector<SamplePair>& train_set,
                                       const std::vector<SamplePair>& val_set,
                                       const std::vector<SamplePair>& test_set, const ModelConfig& model_cfg,
                                       const TrainConfig& train_cfg, const std::vector<LossConfig>& grid,
                                       std::uint64_t seed, const AblationOptions& options = {});

}  // namespace r2au
