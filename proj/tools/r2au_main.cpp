// r2au: data synthesis, training, evaluation, prediction, gradient checks and
// loss ablations for the recurrent residual attention U-Net.
//
// Exit codes: 0 success, 2 usage/config error, 1 runtime failure.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "r2au/run_config.hpp"
#include "r2au/verification.hpp"

namespace fs = std::filesystem;
using namespace r2au;

namespace {

// Problems with what the user asked for, as opposed to failures while doing it.
class UsageError : public Error {
 public:
  using Error::Error;
};

std::uint64_t effective_seed(std::uint64_t configured) { return seed_from_env().value_or(configured); }

void require_file(const std::string& path, const char* what) {
  if (path.empty() || !fs::is_regular_file(path)) throw UsageError(std::string(what) + " not found: " + path);
}

void require_dir(const std::string& path, const char* what) {
  if (path.empty() || !fs::is_directory(path)) throw UsageError(std::string(what) + " not found: " + path);
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

struct Dataset {
  std::vector<SamplePair> train, val, test;
  std::vector<ManifestEntry> manifest;
};

// Loads a DSB-layout directory and splits it by its manifest, or by a fresh
// seeded split when there is none.
Dataset load_dataset(const DataConfig& dc, const std::string& manifest_override) {
  require_dir(dc.root, "data directory");
  const auto samples = load_dsb2018(dc.root, dc.image_size);
  fs::path manifest = manifest_override.empty() ? fs::path(dc.manifest) : fs::path(manifest_override);
  if (manifest.empty()) manifest = fs::path(dc.root) / "manifest.json";
  Dataset d;
  if (fs::exists(manifest)) {
    d.manifest = read_manifest(manifest);
  } else {
    std::vector<std::string> ids;
    for (const auto& s : samples) ids.push_back(s.id);
    d.manifest = make_split(ids, dc.val_count, dc.test_count, dc.split_seed);
  }
  d.train = select_split(samples, d.manifest, Split::train);
  d.val = select_split(samples, d.manifest, Split::val);
  d.test = select_split(samples, d.manifest, Split::test);
  return d;
}

RunConfig load_config_or_default(const std::string& path) {
  RunConfig c;
  if (!path.empty()) {
    require_file(path, "config file");
    c = load_run_config(path);
  }
  c.seed = effective_seed(c.seed);
  return c;
}

// ---- synth -----------------------------------------------------------------

struct SynthArgs {
  std::string out;
  SynthConfig cfg;
  // Unset: the data config's 30/30 holdout, shrunk to n/5 each for small sets.
  std::optional<std::size_t> val, test;
};

int cmd_synth(const SynthArgs& a) {
  SynthConfig cfg = a.cfg;
  cfg.seed = effective_seed(cfg.seed);
  const std::size_t held = std::min<std::size_t>(DataConfig{}.val_count, cfg.n_samples / 5);
  const std::size_t val = a.val.value_or(held), test = a.test.value_or(held);
  if (val + test > cfg.n_samples) throw UsageError("--val + --test exceed --n");
  try {
    cfg.validate();
  } catch (const ArgumentError& e) {
    throw UsageError(e.what());
  }
  const auto samples = synth_blob_instances(cfg);
  write_dsb_layout(a.out, samples);
  std::vector<std::string> ids;
  double fraction = 0;
  for (const auto& s : samples) {
    ids.push_back(s.pair.id);
    fraction += foreground_fraction(s.pair.mask);
  }
  write_manifest(fs::path(a.out) / "manifest.json", make_split(ids, val, test, cfg.seed));
  std::cout << "wrote " << samples.size() << " samples to " << a.out << ", mean foreground fraction "
            << fmt(fraction / static_cast<double>(samples.size())) << "\n";
  return 0;
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
  std::string config, data, out, resume;
  bool print_config = false;
};

int cmd_train(const TrainArgs& a) {
  RunConfig cfg = load_config_or_default(a.config);
  if (!a.data.empty()) cfg.data.root = a.data;
  if (a.print_config) {
    std::cout << to_json(cfg).dump(2) << "\n";
    return 0;
  }
  if (a.out.empty()) throw UsageError("--out is required");

  R2AUNet<float> model = R2AUNet<float>::build(cfg.model, cfg.seed);
  if (!a.resume.empty()) {
    require_file(a.resume, "resume checkpoint");
    if (!(read_checkpoint_config(a.resume) == cfg.model)) {
      throw ConfigError("model", "resume checkpoint was trained with a different model configuration");
    }
    model = load_checkpoint<float>(a.resume);
  }
  const Dataset data = load_dataset(cfg.data, "");
  fs::create_directories(a.out);
  write_manifest(fs::path(a.out) / "manifest.json", data.manifest);
  write_text_atomic(fs::path(a.out) / "config.json", to_json(cfg).dump(2) + "\n");

  TrainOptions opts;
  opts.out_dir = fs::path(a.out);
  opts.on_epoch = [](const EpochRecord& r) { std::cout << metric_log_row(r) << std::endl; };
  std::cout << metric_log_header() << "\n";
  const TrainResult res = train(model, data.train, data.val, cfg.train, cfg.seed, opts);
  save_checkpoint(fs::path(a.out) / "best.r2au", model);
  std::cout << "best epoch " << res.best_epoch << ", val dice " << fmt(res.registry.best().val_dice) << ", "
            << res.optimizer_steps << " optimizer steps\n";
  return 0;
}

// ---- eval ------------------------------------------------------------------

struct EvalArgs {
  std::string ckpt, data, split = "val", manifest, config, out;
  bool per_image = false;
  double threshold = 0.5;
};

int cmd_eval(const EvalArgs& a) {
  require_file(a.ckpt, "checkpoint");
  Split split;
  try {
    split = parse_split(a.split);
  } catch (const ArgumentError& e) {
    throw UsageError(e.what());
  }
  LossConfig loss;
  bool have_loss = false;
  if (!a.config.empty()) {
    loss = load_config_or_default(a.config).train.loss;
    have_loss = true;
  }
  auto model = load_checkpoint<float>(a.ckpt);
  DataConfig dc;
  dc.root = a.data;
  dc.image_size = model.config().height;
  if (model.config().height != model.config().width) throw UsageError("eval needs a square model input");
  const fs::path manifest = a.manifest.empty() ? fs::path(a.data) / "manifest.json" : fs::path(a.manifest);
  require_file(manifest.string(), "manifest");
  const Dataset data = load_dataset(dc, manifest.string());
  const auto& samples = split == Split::train ? data.train : split == Split::val ? data.val : data.test;
  if (samples.empty()) throw UsageError("split '" + a.split + "' is empty");

  const EvalReport rep = evaluate(model, samples, a.threshold);
  AblationRow row;
  row.dataset = fs::path(a.data).filename().string();
  if (row.dataset.empty()) row.dataset = fs::path(a.data).parent_path().filename().string();
  row.model_variant = model.config().variant_name();
  row.loss = loss;
  row.eval = a.per_image ? rep.per_image : rep.pooled;
  std::string line = ablation_csv_row(row);
  if (!have_loss) {
    // Loss columns stay empty when the training loss is unknown.
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    for (std::size_t i = 2; i <= 5; ++i) cells[i].clear();
    line.clear();
    for (std::size_t i = 0; i < cells.size(); ++i) line += (i ? "," : "") + cells[i];
  }
  const std::string text = ablation_csv_header() + "\n" + line + "\n";
  if (!a.out.empty()) write_text_atomic(a.out, text);
  std::cout << text;
  return 0;
}

// ---- predict ---------------------------------------------------------------

struct PredictArgs {
  std::string ckpt, image, out;
  double threshold = 0.5;
};

int cmd_predict(const PredictArgs& a) {
  require_file(a.ckpt, "checkpoint");
  require_file(a.image, "image");
  if (!(a.threshold > 0 && a.threshold < 1)) throw UsageError("--threshold must lie in (0, 1)");
  auto model = load_checkpoint<float>(a.ckpt);
  const ModelConfig& mc = model.config();
  if (mc.input_channels != 1) throw UsageError("predict supports single-channel models only");
  const Tensor<float> original = read_grayscale_png(a.image);
  const Shape os = original.shape();
  Tensor<float> x = resize_bilinear(original, mc.height, mc.width);
  for (float& v : x.values()) v = std::clamp(v, 0.0f, 1.0f);
  Tensor<float> prob = model.predict(x);
  prob = resize_bilinear(prob, os.h, os.w);
  const Tensor<float> mask = threshold(prob, static_cast<float>(a.threshold));
  const fs::path tmp = a.out + ".tmp.png";
  write_mask_png(tmp, mask);
  fs::rename(tmp, a.out);
  std::cout << "wrote " << a.out << " (" << fmt(foreground_fraction(mask)) << " foreground)\n";
  return 0;
}

// ---- gradcheck -------------------------------------------------------------

int cmd_gradcheck(const SuiteOptions& o) {
  bool ok = true;
  std::printf("%-40s %14s %10s %8s\n", "check", "max_rel_error", "tolerance", "result");
  run_gradient_suite(o, [&](const CheckResult& r) {
    ok = ok && r.passed();
    std::printf("%-40s %14.3e %10.0e %8s", r.name.c_str(), r.max_error, r.tolerance, r.passed() ? "PASS" : "FAIL");
    if (r.skipped) std::printf("  (%zu of %zu coordinates unresolved)", r.skipped, r.coordinates + r.skipped);
    if (!r.passed()) std::printf("  (analytic %.6e, numeric %.6e)", r.worst_analytic, r.worst_numeric);
    std::printf("\n");
  });
  std::printf("%s\n", ok ? "all checks passed" : "gradient check FAILED");
  return ok ? 0 : 1;
}

// ---- ablate ----------------------------------------------------------------

struct AblateArgs {
  std::string config, data, grid = "table1", out, subset;
};

int cmd_ablate(const AblateArgs& a) {
  RunConfig cfg = load_config_or_default(a.config);
  if (!a.data.empty()) cfg.data.root = a.data;
  std::vector<LossConfig> grid;
  if (a.grid == "table1") {
    grid = table1_grid();
  } else {
    require_file(a.grid, "grid file");
    std::ifstream f(a.grid);
    nlohmann::json j;
    try {
      f >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("grid", std::string("invalid JSON: ") + e.what());
    }
    grid = parse_grid(j);
  }
  AblationOptions opts;
  opts.dataset = fs::path(cfg.data.root).filename().string();
  if (!a.subset.empty()) {
    std::stringstream ss(a.subset);
    for (std::string item; std::getline(ss, item, ',');) {
      try {
        opts.subset.push_back(std::stoul(item));
      } catch (const std::exception&) {
        throw UsageError("--subset expects comma-separated indices, got '" + item + "'");
      }
      if (opts.subset.back() >= grid.size()) throw UsageError("--subset index " + item + " out of range");
    }
  }
  const Dataset data = load_dataset(cfg.data, "");
  const auto& eval_set = data.test.empty() ? data.val : data.test;
  std::string csv = ablation_csv_header() + "\n";
  std::cout << ablation_csv_header() << std::endl;
  opts.on_row = [&](const AblationRow& r) {
    csv += ablation_csv_row(r) + "\n";
    std::cout << ablation_csv_row(r) << std::endl;
    if (!r.error.empty()) std::cerr << "row failed: " << r.error << "\n";
    if (!a.out.empty()) write_text_atomic(a.out, csv);
  };
  ablation_grid(data.train, data.val, eval_set, cfg.model, cfg.train, grid, cfg.seed, opts);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Recurrent residual attention U-Net toolkit"};
  app.require_subcommand(0, 1);
  bool print_config = false;
  app.add_flag("--print-config", print_config, "Print the default run configuration as JSON and exit");

  SynthArgs synth;
  auto* sc = app.add_subcommand("synth", "Generate a synthetic nuclei dataset in DSB layout");
  sc->add_option("--out", synth.out, "Output directory")->required();
  sc->add_option("--n", synth.cfg.n_samples, "Number of samples");
  sc->add_option("--size", synth.cfg.image_size, "Image side in pixels");
  sc->add_option("--imbalance", synth.cfg.imbalance_target, "Target foreground fraction");
  sc->add_option("--noise", synth.cfg.noise_level, "Gaussian noise std");
  sc->add_option("--seed", synth.cfg.seed, "Random seed");
  sc->add_option("--val", synth.val, "Samples labelled val in manifest.json");
  sc->add_option("--test", synth.test, "Samples labelled test in manifest.json");

  TrainArgs tr;
  auto* tc = app.add_subcommand("train", "Train a model");
  tc->add_option("--config", tr.config, "Run configuration (JSON)");
  tc->add_option("--data", tr.data, "Dataset directory (overrides data.root)");
  tc->add_option("--out", tr.out, "Output directory for checkpoints and metrics.csv");
  tc->add_option("--resume", tr.resume, "Start from this checkpoint");
  tc->add_flag("--print-config", tr.print_config, "Print the effective configuration and exit");

  EvalArgs ev;
  auto* ec = app.add_subcommand("eval", "Score a checkpoint on a dataset split");
  ec->add_option("--ckpt", ev.ckpt, "Checkpoint file")->required();
  ec->add_option("--data", ev.data, "Dataset directory")->required();
  ec->add_option("--split", ev.split, "train, val or test");
  ec->add_option("--manifest", ev.manifest, "Split manifest (default DATA/manifest.json)");
  ec->add_option("--config", ev.config, "Run configuration, fills the loss columns");
  ec->add_option("--threshold", ev.threshold, "Binarization threshold");
  ec->add_option("--out", ev.out, "Also write the CSV here");
  ec->add_flag("--per-image", ev.per_image, "Average per-image metrics instead of pooling pixels");

  PredictArgs pr;
  auto* pc = app.add_subcommand("predict", "Write a binary mask PNG for one image");
  pc->add_option("--ckpt", pr.ckpt, "Checkpoint file")->required();
  pc->add_option("--image", pr.image, "Input PNG")->required();
  pc->add_option("--out", pr.out, "Output PNG")->required();
  pc->add_option("--threshold", pr.threshold, "Binarization threshold");

  SuiteOptions gc;
  auto* gcc = app.add_subcommand("gradcheck", "Finite-difference check of every op, block, loss and the model");
  gcc->add_option("--depth", gc.depth, "End-to-end model depth");
  gcc->add_option("--size", gc.size, "End-to-end model input side");
  gcc->add_option("--base", gc.base_channels, "End-to-end model base channels");
  gcc->add_option("--seeds", gc.seeds, "Number of random seeds");

  AblateArgs ab;
  auto* ac = app.add_subcommand("ablate", "Train once per loss configuration and tabulate test metrics");
  ac->add_option("--config", ab.config, "Run configuration (JSON)");
  ac->add_option("--data", ab.data, "Dataset directory (overrides data.root)");
  ac->add_option("--grid", ab.grid, "\"table1\" or a JSON file listing loss configurations");
  ac->add_option("--out", ab.out, "CSV output file");
  ac->add_option("--subset", ab.subset, "Comma-separated grid indices to run");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (print_config) {
      RunConfig c;
      c.seed = effective_seed(c.seed);
      std::cout << to_json(c).dump(2) << "\n";
      return 0;
    }
    if (sc->parsed()) return cmd_synth(synth);
    if (tc->parsed()) return cmd_train(tr);
    if (ec->parsed()) return cmd_eval(ev);
    if (pc->parsed()) return cmd_predict(pr);
    if (gcc->parsed()) {
      if (gc.seeds == 0) throw UsageError("--seeds must be >= 1");
      ModelConfig probe;
      probe.depth = gc.depth;
      probe.base_channels = gc.base_channels;
      probe.height = probe.width = gc.size;
      try {
        probe.validate();
      } catch (const ArgumentError& e) {
        throw UsageError(e.what());
      }
      return cmd_gradcheck(gc);
    }
    if (ac->parsed()) return cmd_ablate(ab);
    std::cout << app.help();
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const TrainingError& e) {
    std::cerr << "training failed: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
