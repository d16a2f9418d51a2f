#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "r2au/training.hpp"

namespace r2au {

namespace fs = std::filesystem;

namespace {

std::vector<Tensor<float>> snapshot(R2AUNet<float>& model) {
  auto reg = model.registry();
  std::vector<Tensor<float>> out;
  out.reserve(reg.params.size() + reg.buffers.size());
  for (const auto& [name, p] : reg.params) out.push_back(p.value());
  for (const auto& [name, b] : reg.buffers) out.push_back(*b);
  return out;
}

void restore(R2AUNet<float>& model, const std::vector<Tensor<float>>& snap) {
  auto reg = model.registry();
  if (snap.size() != reg.params.size() + reg.buffers.size()) throw ArgumentError("restore: snapshot size mismatch");
  std::size_t k = 0;
  for (auto& [name, p] : reg.params) p.mutable_value() = snap[k++];
  for (auto& [name, b] : reg.buffers) *b = snap[k++];
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string fmt_lr(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6e", v);
  return buf;
}

}  // namespace

void write_text_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write " + tmp.string());
    f << text;
    if (!f) throw Error("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error("cannot move " + tmp.string() + " into place: " + ec.message());
}

void CheckpointConfig::validate() const {
  if (top_k == 0) throw ArgumentError("checkpoint.top_k must be >= 1");
}

void TrainConfig::validate() const {
  if (epochs == 0) throw ArgumentError("train.epochs must be >= 1");
  if (batch_size == 0) throw ArgumentError("train.batch_size must be >= 1");
  if (!(threshold > 0 && threshold < 1)) throw ArgumentError("train.threshold must lie in (0, 1)");
  loss.validate();
  optimizer.validate();
  plateau.validate();
  checkpoint.validate();
  augment.validate();
}

// ---- evaluation ------------------------------------------------------------

EvalReport evaluate(R2AUNet<float>& model, const std::vector<SamplePair>& samples, double threshold,
                    std::size_t batch_size) {
  if (samples.empty()) throw ArgumentError("evaluate: no samples");
  if (batch_size == 0) throw ArgumentError("evaluate: batch_size must be >= 1");
  EvalReport rep;
  rep.images = samples.size();

  ConfusionCounts pooled;
  std::vector<float> scores, labels;
  ScalarMetrics sum{0, 0, 0, 0, 0};
  double auc_sum = 0;
  std::size_t auc_n = 0;

  for (std::size_t first = 0; first < samples.size(); first += batch_size) {
    const std::size_t count = std::min(batch_size, samples.size() - first);
    const SampleBatch batch = make_batch(std::span<const SamplePair>(samples).subspan(first, count));
    const Tensor<float> prob = model.predict(batch.images);
    const Tensor<float> mask = binarize(prob, static_cast<float>(threshold));
    for (std::size_t i = 0; i < count; ++i) {
      const auto p = mask.image(i);
      const auto g = batch.masks.image(i);
      const auto s = prob.image(i);
      const ConfusionCounts c = confusion<float>(p, g);
      pooled += c;
      const ScalarMetrics m = scalar_metrics(c);
      sum.dice += m.dice;
      sum.precision += m.precision;
      sum.recall += m.recall;
      sum.accuracy += m.accuracy;
      sum.cohen_kappa += m.cohen_kappa;
      if (c.tp + c.fn > 0 && c.fp + c.tn > 0) {
        auc_sum += roc_auc<float>(s, g);
        ++auc_n;
      }
      scores.insert(scores.end(), s.begin(), s.end());
      labels.insert(labels.end(), g.begin(), g.end());
    }
  }

  rep.pooled.metrics = scalar_metrics(pooled);
  if (pooled.tp + pooled.fn > 0 && pooled.fp + pooled.tn > 0) {
    rep.pooled.auc = roc_auc<float>(scores, labels);
  }
  const double n = static_cast<double>(samples.size());
  rep.per_image.metrics = {sum.dice / n, sum.precision / n, sum.recall / n, sum.accuracy / n, sum.cohen_kappa / n};
  if (auc_n > 0) rep.per_image.auc = auc_sum / static_cast<double>(auc_n);
  return rep;
}

// ---- checkpoint registry ---------------------------------------------------

std::optional<CheckpointEntry> CheckpointRegistry::offer(CheckpointEntry entry, bool* accepted) {
  if (accepted) *accepted = false;
  const double d = std::isnan(entry.val_dice) ? -1.0 : entry.val_dice;
  auto pos = std::find_if(entries.begin(), entries.end(), [&](const CheckpointEntry& e) {
    const double ed = std::isnan(e.val_dice) ? -1.0 : e.val_dice;
    return d > ed;
  });
  if (static_cast<std::size_t>(pos - entries.begin()) >= top_k) return entry;
  entries.insert(pos, std::move(entry));
  if (accepted) *accepted = true;
  if (entries.size() > top_k) {
    CheckpointEntry evicted = std::move(entries.back());
    entries.pop_back();
    return evicted;
  }
  return std::nullopt;
}

const CheckpointEntry& CheckpointRegistry::best() const {
  if (entries.empty()) throw TrainingError("checkpoint registry is empty");
  return entries.front();
}

// ---- logging ---------------------------------------------------------------

std::string checkpoint_file_name(std::size_t epoch, double dice) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "ckpt_e%zu_d%.4f.r2au", epoch, dice);
  return buf;
}

std::string metric_log_header() {
  return "epoch,train_loss,val_dice,val_precision,val_recall,val_accuracy,val_auc,val_kappa,lr";
}

std::string metric_log_row(const EpochRecord& r) {
  const ScalarMetrics& m = r.val.metrics;
  std::ostringstream s;
  s << r.epoch << ',' << fmt(r.train_loss) << ',' << fmt(m.dice) << ',' << fmt(m.precision) << ','
    << fmt(m.recall) << ',' << fmt(m.accuracy) << ',' << fmt(r.val.auc) << ',' << fmt(m.cohen_kappa) << ','
    << fmt_lr(r.lr);
  return s.str();
}

// ---- training loop ---------------------------------------------------------

TrainResult train(R2AUNet<float>& model, const std::vector<SamplePair>& train_set,
                  const std::vector<SamplePair>& val_set, const TrainConfig& cfg, std::uint64_t seed,
                  const TrainOptions& options) {
  cfg.validate();
  if (train_set.empty()) throw ArgumentError("train: empty training split");
  if (val_set.empty()) throw ArgumentError("train: empty validation split");
  {
    std::set<std::string> ids;
    for (const auto& s : train_set) ids.insert(s.id);
    for (const auto& s : val_set) {
      if (ids.count(s.id)) throw ArgumentError("train: sample '" + s.id + "' is in both train and val splits");
    }
  }
  if (options.out_dir) fs::create_directories(*options.out_dir);

  auto params = model.registry().params;
  OptimizerState<float> opt{cfg.optimizer, {}, {}, 0};
  LrSchedule schedule(cfg.optimizer.lr, cfg.optimizer.decay, cfg.plateau);
  TrainResult result;
  result.registry.top_k = cfg.checkpoint.top_k;
  std::string csv = metric_log_header() + "\n";

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = schedule.lr(epoch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 shuffle_rng(sample_seed(seed, "shuffle", epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0;
    std::size_t batches = 0;
    for (std::size_t first = 0; first < order.size(); first += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, order.size() - first);
      std::vector<SamplePair> picked;
      picked.reserve(count);
      for (std::size_t i = first; i < first + count; ++i) {
        const SamplePair& s = train_set[order[i]];
        if (cfg.use_augmentation) {
          std::mt19937_64 rng(sample_seed(seed, s.id, epoch));
          picked.push_back(augment(s, cfg.augment, rng));
        } else {
          picked.push_back(s);
        }
      }
      const SampleBatch batch = make_batch(picked);

      for (auto& [name, p] : params) p.zero_grad();
      const Var<float> prob = model.forward(Var<float>(batch.images), Mode::train);
      const Var<float> loss = compute_loss(cfg.loss, prob, batch.masks);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw TrainingError("non-finite loss " + std::to_string(value) + " at epoch " + std::to_string(epoch + 1) +
                                ", batch " + std::to_string(batches + 1),
                            epoch + 1, batches + 1, value);
      }
      loss.backward();
      try {
        nadam_step(params, opt, lr);
      } catch (const TrainingError& e) {
        throw TrainingError(std::string(e.what()) + " at epoch " + std::to_string(epoch + 1) + ", batch " +
                                std::to_string(batches + 1),
                            epoch + 1, batches + 1, value);
      }
      loss_sum += value;
      ++batches;
      ++result.optimizer_steps;
    }

    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.train_loss = loss_sum / static_cast<double>(batches);
    rec.val = evaluate(model, val_set, cfg.threshold, cfg.batch_size).pooled;
    rec.lr = lr;
    result.log.push_back(rec);
    schedule.observe(rec.val.metrics.dice);

    CheckpointEntry entry{rec.epoch, rec.val.metrics.dice, {}, snapshot(model)};
    if (options.out_dir) entry.file = *options.out_dir / checkpoint_file_name(rec.epoch, rec.val.metrics.dice);
    const fs::path file = entry.file;
    bool accepted = false;
    auto evicted = result.registry.offer(std::move(entry), &accepted);
    if (accepted && !file.empty()) save_checkpoint(file, model);
    if (evicted && accepted && !evicted->file.empty()) fs::remove(evicted->file);

    csv += metric_log_row(rec) + "\n";
    if (options.out_dir) write_text_atomic(*options.out_dir / "metrics.csv", csv);
    if (options.on_epoch) options.on_epoch(rec);
  }

  const CheckpointRegistry& reg = result.registry;
  result.best_epoch = reg.best().epoch;
  if (cfg.checkpoint.average && reg.entries.size() > 1) {
    std::vector<Tensor<float>> mean = reg.entries.front().snapshot;
    for (std::size_t e = 1; e < reg.entries.size(); ++e)
      for (std::size_t k = 0; k < mean.size(); ++k)
        for (std::size_t i = 0; i < mean[k].size(); ++i) mean[k][i] += reg.entries[e].snapshot[k][i];
    const float inv = 1.0f / static_cast<float>(reg.entries.size());
    for (auto& t : mean)
      for (float& v : t.values()) v *= inv;
    restore(model, mean);
  } else {
    restore(model, reg.best().snapshot);
  }
  return result;
}

}  // namespace r2au
