// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit on any failure.
#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "r2au/run_config.hpp"
#include "r2au/training.hpp"
#include "r2au/verification.hpp"

using namespace r2au;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os << std::setprecision(digits) << v;
  return os.str();
}

// ---- 1: gradient suite -------------------------------------------------------

Verdict gradient_suite() {
  Verdict v;
  const auto t0 = Clock::now();
  SuiteOptions opt;
  opt.seeds = 10;
  std::set<std::string> names;
  double worst = 0, worst_model = 0;
  std::size_t skipped = 0, coords = 0;
  for (const auto& r : run_gradient_suite(opt)) {
    names.insert(r.name);
    coords += r.coordinates;
    skipped += r.skipped;
    (r.name == "model end-to-end" ? worst_model : worst) =
        std::max(r.name == "model end-to-end" ? worst_model : worst, r.max_error);
    v.require(r.passed(), r.name + " error " + fmt(r.max_error) + " >= " + fmt(r.tolerance));
    v.require(r.coordinates > 2 * r.skipped, r.name + " left most coordinates unresolved");
  }
  for (const char* need : {"conv2d same", "conv2d_transpose 2x2 stride2", "maxpool2d", "batch_norm train",
                           "recurrent_conv T=2", "recurrent_residual identity skip",
                           "recurrent_residual projection skip", "attention_gate", "loss wbce", "loss dice_loss2",
                           "loss tversky", "loss focal_tversky", "model end-to-end"}) {
    v.require(names.count(need) == 1, std::string("missing check ") + need);
  }
  const double secs = seconds_since(t0);
  v.require(secs < 120, "runtime " + fmt(secs) + " s");
  if (v.pass) {
    v.detail = "max rel err " + fmt(worst) + " (model " + fmt(worst_model) + "), " + std::to_string(coords) +
               " coords, " + std::to_string(skipped) + " unresolved, " + fmt(secs, 3) + " s";
  }
  return v;
}

// ---- 2: analytic Tversky gradient -------------------------------------------

// TI with p0 and p1 as independent inputs, eps = 0.
double ti_two_input(const std::vector<double>& p0, const std::vector<double>& p1, const std::vector<double>& g0,
                    double alpha, double beta) {
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < p0.size(); ++i) {
    tp += p0[i] * g0[i];
    fp += p0[i] * (1 - g0[i]);
    fn += p1[i] * g0[i];
  }
  return tp / (tp + alpha * fp + beta * fn);
}

double rel(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12}); }

Verdict tversky_oracle() {
  Verdict v;
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> len(8, 64);
  std::uniform_real_distribution<double> u(0.02, 0.98), ab(0.1, 0.9);
  double fd_err = 0, ad_err = 0;
  const double h = 1e-6;
  for (int inst = 0; inst < 100; ++inst) {
    const std::size_t n = len(rng);
    std::vector<double> p0(n), p1(n), g0(n);
    for (std::size_t i = 0; i < n; ++i) {
      p0[i] = u(rng);
      p1[i] = 1 - p0[i];
      g0[i] = u(rng) < 0.4 ? 1.0 : 0.0;
    }
    g0[0] = 1;  // at least one positive
    const double alpha = ab(rng), beta = 1 - alpha;
    const Tensor<double> tp0({1, 1, 1, n}, p0), tg0({1, 1, 1, n}, g0);
    const auto grad = tversky_grad(tp0, tg0, alpha, beta);
    const auto total = grad.total();

    Var<double> leaf(tp0, true);
    tversky_index(leaf, tg0, alpha, beta, 0.0).backward();

    for (std::size_t j = 0; j < n; ++j) {
      // total derivative: p1 = 1 - p0 moves with p0
      auto shift = [&](double d) {
        p0[j] += d;
        p1[j] -= d;
      };
      shift(h);
      const double up = ti_two_input(p0, p1, g0, alpha, beta);
      shift(-2 * h);
      const double dn = ti_two_input(p0, p1, g0, alpha, beta);
      shift(h);
      fd_err = std::max(fd_err, rel(total[j], (up - dn) / (2 * h)));
      // independent partials
      for (auto* x : {&p0, &p1}) {
        const auto& analytic = x == &p0 ? grad.d_p0 : grad.d_p1;
        (*x)[j] += h;
        const double a = ti_two_input(p0, p1, g0, alpha, beta);
        (*x)[j] -= 2 * h;
        const double b = ti_two_input(p0, p1, g0, alpha, beta);
        (*x)[j] += h;
        fd_err = std::max(fd_err, rel(analytic[j], (a - b) / (2 * h)));
      }
      ad_err = std::max(ad_err, rel(total[j], leaf.grad()[j]));
    }
  }
  v.require(fd_err < 1e-6, "finite-difference rel err " + fmt(fd_err));
  v.require(ad_err < 1e-10, "autodiff rel err " + fmt(ad_err));
  if (v.pass) v.detail = "100 instances, fd rel err " + fmt(fd_err) + ", autodiff rel err " + fmt(ad_err);
  return v;
}

// ---- 3: loss identities ------------------------------------------------------

Verdict loss_identities() {
  Verdict v;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  double e_dice = 0, e_ftl = 0, e_bce = 0;
  for (int inst = 0; inst < 50; ++inst) {
    const std::size_t n = 16 + inst;
    Tensor<double> p({1, 1, 1, n}), g({1, 1, 1, n}), prob({1, 1, 1, n});
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = u(rng) < 0.5 ? 1 : 0;
      g[i] = u(rng) < 0.5 ? 1 : 0;
      prob[i] = u(rng);
    }
    p[0] = g[0] = 1;
    p[1] = 0, g[1] = 1;  // overlap is never perfect
    const double dice = dice_coefficient(p, g);
    const double ti = tversky_index(Var<double>(p), g, 0.5, 0.5, 0.0).item();
    const double ftl = focal_tversky(Var<double>(p), g, 0.5, 0.5, 1.0, 0.0).item();
    e_dice = std::max(e_dice, std::abs(ti - dice));
    e_ftl = std::max(e_ftl, std::abs(ftl - (1 - dice)));
    const double w = wbce(Var<double>(prob), g, 0.5).item();
    const double b = bce(Var<double>(prob), g).item();
    e_bce = std::max(e_bce, std::abs(w - 0.5 * b));
  }
  v.require(e_dice <= 1e-12, "TI(.5,.5) vs dice " + fmt(e_dice));
  v.require(e_ftl <= 1e-12, "FTL(.5,.5,1) vs 1-dice " + fmt(e_ftl));
  v.require(e_bce <= 1e-12, "WBCE(.5) vs BCE/2 " + fmt(e_bce));
  if (v.pass) v.detail = "max abs err " + fmt(std::max({e_dice, e_ftl, e_bce}));
  return v;
}

// ---- 4: worked values --------------------------------------------------------

Verdict worked_values() {
  Verdict v;
  const Tensor<double> p({1, 1, 1, 4}, {0.8, 0.6, 0.2, 0.4}), g({1, 1, 1, 4}, {1, 1, 0, 0});
  const double ti = tversky_index(Var<double>(p), g, 0.3, 0.7, 0.0).item();
  const double ftl = focal_tversky(Var<double>(p), g, 0.3, 0.7, 0.75, 0.0).item();
  const auto m = scalar_metrics({1, 1, 1, 1});
  v.require(std::abs(ti - 0.7) < 1e-12, "TI " + fmt(ti, 10));
  v.require(std::abs(ftl - 0.40536) < 5e-6, "FTL " + fmt(ftl, 10));
  v.require(std::abs(m.dice - 0.5) < 1e-12, "dice " + fmt(m.dice));
  v.require(std::abs(m.cohen_kappa) < 1e-12, "kappa " + fmt(m.cohen_kappa));
  if (v.pass) v.detail = "TI " + fmt(ti, 6) + ", FTL " + fmt(ftl, 6) + ", dice 0.5, kappa 0";
  return v;
}

// ---- 5, 6: toy training ------------------------------------------------------

struct ToySplits {
  std::vector<SamplePair> train, val, test;
};

ToySplits toy_data(std::uint64_t seed, std::size_t n = 200, std::size_t size = 64, std::size_t held = 30) {
  SynthConfig sc;
  sc.n_samples = n;
  sc.image_size = size;
  sc.imbalance_target = 0.08;
  sc.blob_radius_max = std::min(12.0, size / 5.0);
  sc.seed = seed;
  const auto all = synth_blobs(sc);
  std::vector<std::string> ids;
  for (const auto& s : all) ids.push_back(s.id);
  const auto manifest = make_split(ids, held, held, seed);
  return {select_split(all, manifest, Split::train), select_split(all, manifest, Split::val),
          select_split(all, manifest, Split::test)};
}

ModelConfig toy_model() {
  ModelConfig m;
  m.depth = 3;
  m.base_channels = 8;
  m.height = m.width = 64;
  m.init = InitScheme::kaiming;
  return m;
}

TrainConfig toy_train(const LossConfig& loss) {
  TrainConfig t;
  t.epochs = 20;
  t.batch_size = 4;
  t.loss = loss;
  t.optimizer.lr = 1e-4;
  t.use_augmentation = false;
  return t;
}

Evaluation toy_run(std::uint64_t seed, const LossConfig& loss, double* secs) {
  const auto t0 = Clock::now();
  const auto d = toy_data(seed);
  auto m = R2AUNet<float>::build(toy_model(), seed);
  train(m, d.train, d.val, toy_train(loss), seed);
  const auto e = evaluate(m, d.test).pooled;
  if (secs) *secs = seconds_since(t0);
  return e;
}

Verdict toy_training(std::size_t seeds) {
  Verdict v;
  std::string dices;
  double slowest = 0;
  for (std::uint64_t s = 0; s < seeds; ++s) {
    double secs = 0;
    const auto e = toy_run(s, LossConfig{}, &secs);
    slowest = std::max(slowest, secs);
    dices += (dices.empty() ? "" : "/") + fmt(e.metrics.dice, 3);
    v.require(e.metrics.dice >= 0.85, "seed " + std::to_string(s) + " dice " + fmt(e.metrics.dice));
    std::cout << "    seed " << s << ": test dice " << fmt(e.metrics.dice) << " in " << fmt(secs, 3) << " s"
              << std::endl;
  }
  v.require(slowest <= 900, "slowest run " + fmt(slowest) + " s");
  if (v.pass) v.detail = "test dice " + dices + ", slowest " + fmt(slowest, 3) + " s";
  return v;
}

Verdict recall_direction(std::size_t seeds) {
  Verdict v;
  LossConfig high, low;
  high.kind = low.kind = LossKind::tversky;
  high.alpha = 0.3, high.beta = 0.7;
  low.alpha = 0.7, low.beta = 0.3;
  double r_high = 0, r_low = 0;
  for (std::uint64_t s = 0; s < seeds; ++s) {
    const double a = toy_run(s, high, nullptr).metrics.recall;
    const double b = toy_run(s, low, nullptr).metrics.recall;
    std::cout << "    seed " << s << ": recall beta=0.7 " << fmt(a) << ", beta=0.3 " << fmt(b) << std::endl;
    r_high += a / seeds;
    r_low += b / seeds;
  }
  v.require(r_high >= r_low - 0.02, "mean recall " + fmt(r_high) + " < " + fmt(r_low) + " - 0.02");
  v.detail = "mean recall beta=0.7 " + fmt(r_high) + " vs beta=0.3 " + fmt(r_low);
  return v;
}

// ---- 7: ablation grid --------------------------------------------------------

Verdict ablation(const std::vector<std::size_t>& subset) {
  Verdict v;
  const auto t0 = Clock::now();
  const auto d = toy_data(11, 100, 32, 15);
  ModelConfig m;
  m.depth = 2;
  m.base_channels = 4;
  m.height = m.width = 32;
  m.init = InitScheme::kaiming;
  auto t = toy_train(LossConfig{});
  t.epochs = 5;
  t.optimizer.lr = 1e-3;
  AblationOptions opt;
  opt.subset = subset;
  const auto rows = ablation_grid(d.train, d.val, d.test, m, t, table1_grid(), 0, opt);
  const std::size_t expected = subset.empty() ? 19 : subset.size();
  v.require(rows.size() == expected, std::to_string(rows.size()) + " rows");

  const fs::path csv = fs::temp_directory_path() / ("r2au_ablation_" + std::to_string(std::random_device{}()) + ".csv");
  std::string text = ablation_csv_header() + "\n";
  for (const auto& r : rows) text += ablation_csv_row(r) + "\n";
  write_text_atomic(csv, text);

  v.require(ablation_csv_header() == "dataset,model_variant,loss,alpha,beta,gamma,dice,precision,recall,accuracy,auc,kappa",
            "header mismatch");
  std::ifstream in(csv);
  std::string line;
  std::getline(in, line);
  v.require(line == ablation_csv_header(), "CSV header on disk");
  std::size_t lines = 0;
  while (std::getline(in, line)) {
    ++lines;
    v.require(std::count(line.begin(), line.end(), ',') == 11, "row with wrong column count: " + line);
  }
  fs::remove(csv);
  v.require(lines == expected, std::to_string(lines) + " CSV rows");
  for (const auto& r : rows) {
    const auto& e = r.eval;
    const bool finite = std::isfinite(e.metrics.dice) && std::isfinite(e.metrics.precision) &&
                        std::isfinite(e.metrics.recall) && std::isfinite(e.metrics.accuracy) &&
                        std::isfinite(e.auc) && std::isfinite(e.metrics.cohen_kappa);
    v.require(r.error.empty() && finite, to_string(r.loss.kind) + " " + r.error);
  }
  const double secs = seconds_since(t0);
  v.require(secs <= 3 * 3600, "runtime " + fmt(secs));
  if (v.pass) v.detail = std::to_string(rows.size()) + " configurations, finite metrics, " + fmt(secs, 3) + " s";
  return v;
}

// ---- 8: architecture invariants ----------------------------------------------

Verdict architecture() {
  Verdict v;
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<std::size_t> depth(1, 4), base(2, 8), steps(1, 3), mult(1, 3);
  std::bernoulli_distribution coin(0.5);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  for (int c = 0; c < 5; ++c) {
    ModelConfig cfg;
    cfg.depth = depth(rng);
    cfg.base_channels = base(rng);
    cfg.timesteps = steps(rng);
    cfg.use_attention = c == 0 || coin(rng);
    cfg.use_residual = coin(rng);
    cfg.height = (std::size_t{1} << cfg.depth) * mult(rng);
    cfg.width = (std::size_t{1} << cfg.depth) * mult(rng);
    cfg.init = c % 2 ? InitScheme::paper : InitScheme::kaiming;
    const std::string tag = "config " + std::to_string(c) + ": ";
    auto m = R2AUNet<float>::build(cfg, c);

    Tensor<float> x({2, 1, cfg.height, cfg.width});
    for (float& px : x.values()) px = u(rng);
    for (Mode mode : {Mode::train, Mode::eval}) {
      const auto y = m.forward(Var<float>(x), mode).value();
      v.require(y.shape() == (Shape{2, 1, cfg.height, cfg.width}), tag + "output shape");
      v.require(std::all_of(y.values().begin(), y.values().end(), [](float p) { return p > 0.f && p < 1.f; }),
                tag + "output outside (0,1)");
    }
    for (std::size_t k = 0; k < cfg.depth; ++k) {
      const std::size_t ch = m.encoder()[k].unit.out_channels();
      v.require(ch == cfg.base_channels << k, tag + "encoder ladder");
      const std::size_t next = k + 1 < cfg.depth ? m.encoder()[k + 1].unit.out_channels()
                                                 : m.bottleneck().unit.out_channels();
      v.require(next == 2 * ch, tag + "channels do not double");
      v.require(m.has_gate(k) == (cfg.use_attention && k > 0), tag + "gate placement");
    }
    for (const auto& stage : m.decoder()) {
      v.require(stage.block.unit.out_channels() == stage.up_kernel.shape().n, tag + "decoder ladder");
    }
  }
  if (v.pass) v.detail = "5 random configurations";
  return v;
}

// ---- 9: pipeline invariants --------------------------------------------------

bool binary(const Tensor<float>& t) {
  return std::all_of(t.values().begin(), t.values().end(), [](float p) { return p == 0.f || p == 1.f; });
}

bool identical(const Tensor<float>& a, const Tensor<float>& b) {
  return a.shape() == b.shape() && std::equal(a.values().begin(), a.values().end(), b.values().begin());
}

Verdict pipeline() {
  Verdict v;
  SynthConfig sc;
  sc.n_samples = 12;
  sc.image_size = 48;
  sc.seed = 5;
  const auto inst = synth_blob_instances(sc);
  for (const auto& s : inst) {
    const auto merged = merge_masks(s.instance_masks);
    v.require(identical(merged, s.pair.mask), "merge of instances differs from mask");
    v.require(identical(merge_masks(std::vector{merged, merged}), merged), "merge not idempotent");
    v.require(identical(merge_masks(std::vector{merged, Tensor<float>(merged.shape())}), merged),
              "zero mask is not the merge identity");
  }

  AugmentConfig all;
  all.rot90 = 0.5;
  all.elastic = true;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    std::mt19937_64 rng(seed);
    for (const auto& s : inst) {
      const auto& p = s.pair;
      for (const auto& out : {flip_horizontal(p), flip_vertical(p), rotate90(p, 1 + static_cast<int>(seed) % 3),
                              augment(p, all, rng)}) {
        v.require(binary(out.mask), "non-binary mask after transform");
      }
    }
  }
  v.require(binary(threshold(resize_bilinear(inst[0].pair.mask, 20, 20))), "resized mask not binary");

  std::vector<std::string> ids;
  for (const auto& s : inst) ids.push_back(s.pair.id);
  const auto a = make_split(ids, 3, 2, 9), b = make_split(ids, 3, 2, 9);
  std::set<std::string> seen;
  for (std::size_t i = 0; i < a.size(); ++i) {
    v.require(seen.insert(a[i].id).second, "id in two splits");
    v.require(a[i].id == b[i].id && a[i].split == b[i].split, "split not deterministic");
  }
  v.require(seen.size() == ids.size(), "split does not cover every id");

  const auto again = synth_blob_instances(sc);
  for (std::size_t i = 0; i < inst.size(); ++i) {
    v.require(identical(inst[i].pair.image, again[i].pair.image) && identical(inst[i].pair.mask, again[i].pair.mask),
              "regeneration differs");
  }
  if (v.pass) v.detail = "merge, binarity, split and regeneration hold";
  return v;
}

// ---- 10: checkpoint round trip -----------------------------------------------

Verdict checkpoint() {
  Verdict v;
  ModelConfig cfg;
  cfg.depth = 3;
  cfg.base_channels = 4;
  cfg.height = cfg.width = 32;
  auto m = R2AUNet<float>::build(cfg, 17);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  Tensor<float> x({3, 1, 32, 32});
  for (float& p : x.values()) p = u(rng);
  m.forward(Var<float>(x), Mode::train);  // moves the running statistics
  const fs::path p = fs::temp_directory_path() / ("r2au_accept_" + std::to_string(std::random_device{}()) + ".r2au");
  save_checkpoint(p, m);
  auto back = load_checkpoint<float>(p);
  fs::remove(p);
  const auto a = m.predict(x), b = back.predict(x);
  v.require(back.config() == m.config(), "config differs");
  v.require(a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0,
            "outputs differ");
  if (v.pass) v.detail = "bit-identical eval output";
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"R2AU-Net acceptance criteria"};
  std::vector<int> only;
  std::vector<std::size_t> subset;
  std::size_t toy_seeds = 3, recall_seeds = 5;
  app.add_option("--only", only, "criteria to run (default: all)")->check(CLI::Range(1, 10));
  app.add_option("--ablation-subset", subset, "grid indices for criterion 7 (default: all 19)");
  app.add_option("--toy-seeds", toy_seeds, "seeds for criterion 5");
  app.add_option("--recall-seeds", recall_seeds, "seeds for criterion 6");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"gradient suite", gradient_suite},
      {"Tversky gradient oracle", tversky_oracle},
      {"loss identities", loss_identities},
      {"worked values", worked_values},
      {"toy training", [&] { return toy_training(toy_seeds); }},
      {"recall vs beta", [&] { return recall_direction(recall_seeds); }},
      {"ablation grid", [&] { return ablation(subset); }},
      {"architecture invariants", architecture},
      {"pipeline invariants", pipeline},
      {"checkpoint round trip", checkpoint},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail = std::string("exception: ") + e.what();
    }
    failures += !v.pass;
    std::cout << (v.pass ? "PASS" : "FAIL") << " " << id << " " << criteria[i].first << ": " << v.detail
              << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
