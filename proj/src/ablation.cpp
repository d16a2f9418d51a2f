#include <cmath>
#include <cstdio>
#include <sstream>

#include "r2au/training.hpp"

namespace r2au {

namespace {

LossConfig make_loss(LossKind kind, double alpha = 0.3, double beta = 0.7, double gamma = 0.75) {
  LossConfig c;
  c.kind = kind;
  c.alpha = alpha;
  c.beta = beta;
  c.gamma = gamma;
  return c;
}

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string param(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

}  // namespace

std::vector<LossConfig> table1_grid() {
  using K = LossKind;
  return {
      make_loss(K::focal_tversky, 0.4, 0.6, 0.75), make_loss(K::focal_tversky, 0.3, 0.7, 0.75),
      make_loss(K::focal_tversky, 0.2, 0.8, 0.75), make_loss(K::focal_tversky, 0.3, 0.7, 0.80),
      make_loss(K::focal_tversky, 0.3, 0.7, 0.90), make_loss(K::focal_tversky, 0.3, 0.7, 0.65),
      make_loss(K::focal_tversky, 0.2, 0.8, 0.65), make_loss(K::focal_tversky, 0.2, 0.8, 0.55),
      make_loss(K::focal_tversky, 0.2, 0.8, 0.45), make_loss(K::focal_tversky, 0.2, 0.8, 0.50),
      make_loss(K::focal_tversky, 0.2, 0.8, 0.85), make_loss(K::focal_tversky, 0.4, 0.6, 0.85),
      make_loss(K::focal_tversky, 0.4, 0.6, 0.65), make_loss(K::dice),
      make_loss(K::bce_dice),                      make_loss(K::tversky, 0.2, 0.8),
      make_loss(K::tversky, 0.3, 0.7),             make_loss(K::tversky, 0.4, 0.6),
      make_loss(K::wbce),
  };
}

std::string ablation_csv_header() {
  return "dataset,model_variant,loss,alpha,beta,gamma,dice,precision,recall,accuracy,auc,kappa";
}

std::string ablation_csv_row(const AblationRow& r) {
  const LossKind k = r.loss.kind;
  const bool tv = k == LossKind::tversky || k == LossKind::focal_tversky;
  const ScalarMetrics& m = r.eval.metrics;
  std::ostringstream s;
  s << r.dataset << ',' << r.model_variant << ',' << to_string(k) << ',' << (tv ? param(r.loss.alpha) : "") << ','
    << (tv ? param(r.loss.beta) : "") << ',' << (k == LossKind::focal_tversky ? param(r.loss.gamma) : "") << ','
    << num(m.dice) << ',' << num(m.precision) << ',' << num(m.recall) << ',' << num(m.accuracy) << ','
    << num(r.eval.auc) << ',' << num(m.cohen_kappa);
  return s.str();
}

std::vector<AblationRow> ablation_grid(const std::vector<SamplePair>& train_set,
                                       const std::vector<SamplePair>& val_set,
                                       const std::vector<SamplePair>& test_set, const ModelConfig& model_cfg,
                                       const TrainConfig& train_cfg, const std::vector<LossConfig>& grid,
                                       std::uint64_t seed, const AblationOptions& options) {
  if (grid.empty()) throw ArgumentError("ablation_grid: empty grid");
  if (test_set.empty()) throw ArgumentError("ablation_grid: empty evaluation split");
  std::vector<std::size_t> indices = options.subset;
  if (indices.empty()) {
    for (std::size_t i = 0; i < grid.size(); ++i) indices.push_back(i);
  }

  std::vector<AblationRow> rows;
  for (std::size_t idx : indices) {
    if (idx >= grid.size()) throw ArgumentError("ablation_grid: subset index " + std::to_string(idx) + " out of range");
    AblationRow row;
    row.dataset = options.dataset;
    row.model_variant = model_cfg.variant_name();
    row.loss = grid[idx];
    const double nan = std::numeric_limits<double>::quiet_NaN();
    row.eval.metrics = {nan, nan, nan, nan, nan};
    try {
      TrainConfig cfg = train_cfg;
      cfg.loss = grid[idx];
      auto model = R2AUNet<float>::build(model_cfg, seed);
      train(model, train_set, val_set, cfg, seed);
      row.eval = evaluate(model, test_set, cfg.threshold, cfg.batch_size).pooled;
    } catch (const Error& e) {
      row.error = e.what();
    }
    if (options.on_row) options.on_row(row);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace r2au
