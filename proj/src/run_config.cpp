#include "r2au/run_config.hpp"

#include <concepts>
#include <cstdlib>
#include <fstream>
#include <set>

namespace r2au {

using nlohmann::json;

namespace {

// Strict reader over one JSON object.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  template <std::unsigned_integral U>
    requires(!std::is_same_v<U, bool>)
  void get(const char* key, U& out) {
    read(key, out, "a non-negative integer", &json::is_number_unsigned);
  }
  void get(const char* key, double& out) { read(key, out, "a number", &json::is_number); }
  void get(const char* key, bool& out) { read(key, out, "a boolean", &json::is_boolean); }
  void get(const char* key, std::string& out) { read(key, out, "a string", &json::is_string); }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  std::string path(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(path(it.key().c_str()), "unknown field");
    }
  }

 private:
  template <typename T>
  void read(const char* key, T& out, const char* what, bool (json::*check)() const noexcept) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    if (!((*it).*check)()) throw ConfigError(path(key), std::string("expected ") + what);
    out = it->get<T>();
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename F>
void wrap(const std::string& path, F&& f) {
  try {
    f();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(path, e.what());
  }
}

void read_nadam(const json& j, const std::string& path, NadamConfig& c) {
  Section s(j, path);
  s.get("lr", c.lr);
  s.get("decay", c.decay);
  s.get("beta1", c.beta1);
  s.get("beta2", c.beta2);
  s.get("eps", c.eps);
  s.finish();
  wrap(path, [&] { c.validate(); });
}

void read_plateau(const json& j, const std::string& path, PlateauConfig& c) {
  Section s(j, path);
  s.get("patience", c.patience);
  s.get("factor", c.factor);
  s.get("min_lr", c.min_lr);
  s.finish();
  wrap(path, [&] { c.validate(); });
}

void read_checkpoint(const json& j, const std::string& path, CheckpointConfig& c) {
  Section s(j, path);
  s.get("top_k", c.top_k);
  s.get("average", c.average);
  s.finish();
  wrap(path, [&] { c.validate(); });
}

AugmentConfig augment_from_json(const json& j, const std::string& path) {
  AugmentConfig c;
  Section s(j, path);
  s.get("flip_h", c.flip_h);
  s.get("flip_v", c.flip_v);
  s.get("rot90", c.rot90);
  s.get("rotate_deg", c.rotate_deg);
  s.get("shift_frac", c.shift_frac);
  s.get("zoom_min", c.zoom_min);
  s.get("zoom_max", c.zoom_max);
  s.get("shear_deg", c.shear_deg);
  s.get("elastic", c.elastic);
  s.get("elastic_alpha", c.elastic_alpha);
  s.get("elastic_sigma", c.elastic_sigma);
  s.finish();
  wrap(path, [&] { c.validate(); });
  return c;
}

json augment_to_json(const AugmentConfig& c) {
  return {{"flip_h", c.flip_h},         {"flip_v", c.flip_v},       {"rot90", c.rot90},
          {"rotate_deg", c.rotate_deg}, {"shift_frac", c.shift_frac}, {"zoom_min", c.zoom_min},
          {"zoom_max", c.zoom_max},     {"shear_deg", c.shear_deg}, {"elastic", c.elastic},
          {"elastic_alpha", c.elastic_alpha}, {"elastic_sigma", c.elastic_sigma}};
}

}  // namespace

json model_config_to_json(const ModelConfig& c) {
  return {{"depth", c.depth},
          {"base_channels", c.base_channels},
          {"timesteps", c.timesteps},
          {"kernel", c.kernel},
          {"use_attention", c.use_attention},
          {"use_residual", c.use_residual},
          {"attend_first_skip", c.attend_first_skip},
          {"input_channels", c.input_channels},
          {"height", c.height},
          {"width", c.width},
          {"init", to_string(c.init)}};
}

ModelConfig model_config_from_json(const json& j, const std::string& path) {
  ModelConfig c;
  Section s(j, path);
  s.get("depth", c.depth);
  s.get("base_channels", c.base_channels);
  s.get("timesteps", c.timesteps);
  s.get("kernel", c.kernel);
  s.get("use_attention", c.use_attention);
  s.get("use_residual", c.use_residual);
  s.get("attend_first_skip", c.attend_first_skip);
  s.get("input_channels", c.input_channels);
  s.get("height", c.height);
  s.get("width", c.width);
  std::string init = to_string(c.init);
  s.get("init", init);
  wrap(path + ".init", [&] { c.init = parse_init_scheme(init); });
  s.finish();
  wrap(path, [&] { c.validate(); });
  return c;
}

json loss_config_to_json(const LossConfig& c) {
  return {{"kind", to_string(c.kind)}, {"wbce_weight", c.wbce_weight}, {"alpha", c.alpha}, {"beta", c.beta},
          {"gamma", c.gamma},          {"eps", c.eps},                 {"prob_clip", c.prob_clip}};
}

LossConfig loss_config_from_json(const json& j, const std::string& path) {
  LossConfig c;
  Section s(j, path);
  std::string kind = to_string(c.kind);
  s.get("kind", kind);
  wrap(path + ".kind", [&] { c.kind = parse_loss_kind(kind); });
  s.get("wbce_weight", c.wbce_weight);
  s.get("alpha", c.alpha);
  s.get("beta", c.beta);
  s.get("gamma", c.gamma);
  s.get("eps", c.eps);
  s.get("prob_clip", c.prob_clip);
  s.finish();
  wrap(path, [&] { c.validate(); });
  return c;
}

void RunConfig::validate() const {
  wrap("model", [&] { model.validate(); });
  wrap("train", [&] { train.validate(); });
  if (data.image_size == 0) throw ConfigError("data.image_size", "must be >= 1");
  if (data.image_size != model.height || data.image_size != model.width) {
    throw ConfigError("data.image_size", "must equal model.height and model.width");
  }
}

RunConfig parse_run_config(const json& j) {
  RunConfig c;
  Section root(j, "");
  root.get("seed", c.seed);
  if (const json* m = root.child("model")) c.model = model_config_from_json(*m, "model");
  if (const json* l = root.child("loss")) c.train.loss = loss_config_from_json(*l, "loss");
  if (const json* a = root.child("augment")) c.train.augment = augment_from_json(*a, "augment");
  if (const json* t = root.child("train")) {
    Section s(*t, "train");
    s.get("epochs", c.train.epochs);
    s.get("batch_size", c.train.batch_size);
    s.get("use_augmentation", c.train.use_augmentation);
    s.get("threshold", c.train.threshold);
    if (const json* o = s.child("optimizer")) read_nadam(*o, "train.optimizer", c.train.optimizer);
    if (const json* p = s.child("plateau")) read_plateau(*p, "train.plateau", c.train.plateau);
    if (const json* k = s.child("checkpoint")) read_checkpoint(*k, "train.checkpoint", c.train.checkpoint);
    s.finish();
  }
  if (const json* d = root.child("data")) {
    Section s(*d, "data");
    s.get("root", c.data.root);
    s.get("manifest", c.data.manifest);
    s.get("image_size", c.data.image_size);
    s.get("val_count", c.data.val_count);
    s.get("test_count", c.data.test_count);
    s.get("split_seed", c.data.split_seed);
    s.finish();
  }
  root.finish();
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError(path.string(), "cannot open config file");
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw ConfigError(path.string(), std::string("invalid JSON: ") + e.what());
  }
  return parse_run_config(j);
}

json to_json(const RunConfig& c) {
  const TrainConfig& t = c.train;
  return {
      {"seed", c.seed},
      {"model", model_config_to_json(c.model)},
      {"loss", loss_config_to_json(t.loss)},
      {"augment", augment_to_json(t.augment)},
      {"train",
       {{"epochs", t.epochs},
        {"batch_size", t.batch_size},
        {"use_augmentation", t.use_augmentation},
        {"threshold", t.threshold},
        {"optimizer",
         {{"lr", t.optimizer.lr},
          {"decay", t.optimizer.decay},
          {"beta1", t.optimizer.beta1},
          {"beta2", t.optimizer.beta2},
          {"eps", t.optimizer.eps}}},
        {"plateau", {{"patience", t.plateau.patience}, {"factor", t.plateau.factor}, {"min_lr", t.plateau.min_lr}}},
        {"checkpoint", {{"top_k", t.checkpoint.top_k}, {"average", t.checkpoint.average}}}}},
      {"data",
       {{"root", c.data.root},
        {"manifest", c.data.manifest},
        {"image_size", c.data.image_size},
        {"val_count", c.data.val_count},
        {"test_count", c.data.test_count},
        {"split_seed", c.data.split_seed}}},
  };
}

std::vector<LossConfig> parse_grid(const json& j) {
  if (j.is_string()) {
    if (j.get<std::string>() == "table1") return table1_grid();
    throw ConfigError("grid", "unknown grid name '" + j.get<std::string>() + "'");
  }
  if (!j.is_array() || j.empty()) throw ConfigError("grid", "expected \"table1\" or a non-empty list of losses");
  std::vector<LossConfig> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(loss_config_from_json(j[i], "grid[" + std::to_string(i) + "]"));
  return out;
}

std::optional<std::uint64_t> seed_from_env() {
  const char* raw = std::getenv("R2AU_SEED");
  if (!raw || !*raw) return std::nullopt;
  const std::string s(raw);
  if (s.find_first_not_of("0123456789") != std::string::npos || s.size() > 20) {
    throw ConfigError("R2AU_SEED", "expected an unsigned integer, got '" + s + "'");
  }
  try {
    return std::stoull(s);
  } catch (const std::exception&) {
    throw ConfigError("R2AU_SEED", "out of range: '" + s + "'");
  }
}

}  // namespace r2au
