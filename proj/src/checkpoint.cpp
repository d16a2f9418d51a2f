#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "r2au/model.hpp"
#include "r2au/run_config.hpp"

namespace r2au {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'R', '2', 'A', 'U'};

template <typename U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <typename U>
U get_le(const unsigned char* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

void put_f32(std::string& out, float f) { put_le(out, std::bit_cast<std::uint32_t>(f)); }

struct Parsed {
  json header;
  std::string blob;
};

Parsed read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw CheckpointError(path.string() + " is not a checkpoint file (bad magic)");
  }
  const auto* u = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint32_t version = get_le<std::uint32_t>(u + 4);
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint " + path.string() + " has format version " + std::to_string(version) +
                          ", this build reads version " + std::to_string(kCheckpointVersion));
  }
  const std::uint64_t header_len = get_le<std::uint64_t>(u + 8);
  if (header_len > bytes.size() - 16) throw CheckpointError("checkpoint " + path.string() + " is truncated");
  Parsed p;
  try {
    p.header = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const json::exception& e) {
    throw CheckpointError("checkpoint header is not valid JSON: " + std::string(e.what()));
  }
  p.blob = bytes.substr(16 + header_len);
  return p;
}

ModelConfig config_of(const json& header) {
  if (!header.is_object() || !header.contains("config")) throw CheckpointError("checkpoint header lacks 'config'");
  try {
    return model_config_from_json(header["config"], "config");
  } catch (const Error& e) {
    throw CheckpointError(std::string("checkpoint config: ") + e.what());
  }
}

}  // namespace

template <typename T>
void save_checkpoint(const fs::path& path, R2AUNet<T>& model) {
  auto reg = model.registry();
  json tensors = json::array();
  std::string blob;
  auto append = [&](const std::string& name, const char* kind, const Tensor<T>& t) {
    const Shape s = t.shape();
    tensors.push_back({{"name", name}, {"kind", kind}, {"shape", {s.n, s.c, s.h, s.w}}, {"offset", blob.size()}});
    for (T v : t.values()) put_f32(blob, static_cast<float>(v));
  };
  for (const auto& [name, p] : reg.params) append(name, "param", p.value());
  for (const auto& [name, b] : reg.buffers) append(name, "buffer", *b);

  const json header = {{"config", model_config_to_json(model.config())}, {"tensors", tensors}};
  const std::string text = header.dump();
  std::string out(kMagic, 4);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, text.size());
  out += text;
  out += blob;

  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("cannot write checkpoint " + tmp.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw CheckpointError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw CheckpointError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

template <typename T>
R2AUNet<T> load_checkpoint(const fs::path& path) {
  const Parsed p = read_file(path);
  auto model = R2AUNet<T>::build(config_of(p.header), 0);
  auto reg = model.registry();

  std::map<std::string, Tensor<T>*> targets;
  for (auto& [name, v] : reg.params) targets[name] = &v.mutable_value();
  for (auto& [name, b] : reg.buffers) targets[name] = b;

  const json& tensors = p.header.value("tensors", json::array());
  if (!tensors.is_array()) throw CheckpointError("checkpoint 'tensors' must be a list");
  for (const auto& e : tensors) {
    std::string name;
    std::vector<std::size_t> shape;
    std::size_t offset = 0;
    try {
      name = e.at("name").get<std::string>();
      shape = e.at("shape").get<std::vector<std::size_t>>();
      offset = e.at("offset").get<std::size_t>();
    } catch (const json::exception& ex) {
      throw CheckpointError(std::string("malformed tensor entry: ") + ex.what());
    }
    auto it = targets.find(name);
    if (it == targets.end()) throw CheckpointError("checkpoint tensor '" + name + "' does not exist in the model");
    Tensor<T>& dst = *it->second;
    const Shape s = dst.shape();
    if (shape != std::vector<std::size_t>{s.n, s.c, s.h, s.w}) {
      throw CheckpointError("checkpoint tensor '" + name + "' has the wrong shape for " + to_string(s));
    }
    if (offset > p.blob.size() || (p.blob.size() - offset) / 4 < dst.size()) {
      throw CheckpointError("checkpoint tensor '" + name + "' runs past the end of the file");
    }
    const auto* u = reinterpret_cast<const unsigned char*>(p.blob.data()) + offset;
    for (std::size_t i = 0; i < dst.size(); ++i) {
      dst[i] = static_cast<T>(std::bit_cast<float>(get_le<std::uint32_t>(u + 4 * i)));
    }
    targets.erase(it);
  }
  if (!targets.empty()) throw CheckpointError("checkpoint lacks tensor '" + targets.begin()->first + "'");
  return model;
}

ModelConfig read_checkpoint_config(const fs::path& path) { return config_of(read_file(path).header); }

template void save_checkpoint<float>(const fs::path&, R2AUNet<float>&);
template void save_checkpoint<double>(const fs::path&, R2AUNet<double>&);
template R2AUNet<float> load_checkpoint<float>(const fs::path&);
template R2AUNet<double> load_checkpoint<double>(const fs::path&);

}  // namespace r2au
