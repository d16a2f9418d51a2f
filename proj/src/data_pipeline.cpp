#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include "json.hpp"
#include "r2au/data.hpp"

namespace r2au {

namespace fs = std::filesystem;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<fs::path> sorted_pngs(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

cv::Mat to_mat(const Tensor<float>& t) {
  const Shape s = t.shape();
  cv::Mat m(static_cast<int>(s.h), static_cast<int>(s.w), CV_32F);
  std::copy(t.data(), t.data() + s.plane(), m.ptr<float>(0));
  return m;
}

Tensor<float> from_mat(const cv::Mat& m) {
  Tensor<float> t(Shape{1, 1, static_cast<std::size_t>(m.rows), static_cast<std::size_t>(m.cols)});
  for (int i = 0; i < m.rows; ++i) {
    const float* row = m.ptr<float>(i);
    std::copy(row, row + m.cols, t.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(m.cols));
  }
  return t;
}

Tensor<float> flip_plane(const Tensor<float>& t, bool horizontal) {
  const Shape s = t.shape();
  Tensor<float> out(s);
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc)
    for (std::size_t i = 0; i < s.h; ++i)
      for (std::size_t j = 0; j < s.w; ++j) {
        const std::size_t si = horizontal ? i : s.h - 1 - i;
        const std::size_t sj = horizontal ? s.w - 1 - j : j;
        out[(nc * s.h + i) * s.w + j] = t[(nc * s.h + si) * s.w + sj];
      }
  return out;
}

// One counter-clockwise quarter turn.
Tensor<float> turn_plane(const Tensor<float>& t) {
  const Shape s = t.shape();
  Tensor<float> out(Shape{s.n, s.c, s.w, s.h});
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc)
    for (std::size_t i = 0; i < s.h; ++i)
      for (std::size_t j = 0; j < s.w; ++j) {
        // (i, j) -> (w - 1 - j, i)
        out[(nc * s.w + (s.w - 1 - j)) * s.h + i] = t[(nc * s.h + i) * s.w + j];
      }
  return out;
}

bool check_probability(double p) { return p >= 0.0 && p <= 1.0; }

}  // namespace

Tensor<float> merge_masks(std::span<const Tensor<float>> masks) {
  if (masks.empty()) throw ArgumentError("merge_masks: no masks given");
  Tensor<float> out(masks[0].shape());
  for (const auto& m : masks) {
    if (m.shape() != out.shape()) {
      throw ShapeError("merge_masks: shape " + to_string(m.shape()) + " differs from " + to_string(out.shape()));
    }
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (m[i] != 0.0f) out[i] = 1.0f;
    }
  }
  return out;
}

SamplePair load_dsb_sample(const fs::path& sample_dir, std::size_t size) {
  const std::string id = sample_dir.filename().string();
  const fs::path image_path = sample_dir / "images" / (id + ".png");
  const fs::path mask_dir = sample_dir / "masks";
  if (!fs::is_regular_file(image_path)) throw IngestError("sample '" + id + "': missing " + image_path.string());
  if (!fs::is_directory(mask_dir)) throw IngestError("sample '" + id + "': missing masks directory");

  SamplePair s;
  s.id = id;
  try {
    const Tensor<float> image = read_grayscale_png(image_path);
    std::vector<Tensor<float>> masks;
    for (const auto& p : sorted_pngs(mask_dir)) {
      Tensor<float> m = threshold(read_grayscale_png(p), 0.5f);
      if (m.shape() != image.shape()) {
        throw IngestError("mask " + p.filename().string() + " has shape " + to_string(m.shape()) +
                          ", image has " + to_string(image.shape()));
      }
      masks.push_back(std::move(m));
    }
    if (masks.empty()) throw IngestError("no mask files");
    s.image = resize_bilinear(image, size, size);
    for (float& v : s.image.values()) v = std::clamp(v, 0.0f, 1.0f);
    s.mask = threshold(resize_bilinear(merge_masks(masks), size, size), 0.5f);
  } catch (const IngestError& e) {
    throw IngestError("sample '" + id + "': " + e.what());
  } catch (const Error& e) {
    throw IngestError("sample '" + id + "': " + e.what());
  }
  return s;
}

std::vector<SamplePair> load_dsb2018(const fs::path& root, std::size_t size) {
  if (!fs::is_directory(root)) throw IngestError("dataset root " + root.string() + " is not a directory");
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  std::vector<SamplePair> out;
  out.reserve(dirs.size());
  for (const auto& d : dirs) out.push_back(load_dsb_sample(d, size));
  return out;
}

AugmentConfig AugmentConfig::none() {
  AugmentConfig c;
  c.flip_h = c.flip_v = c.rot90 = 0.0;
  c.rotate_deg = c.shift_frac = c.shear_deg = 0.0;
  c.zoom_min = c.zoom_max = 1.0;
  c.elastic = false;
  return c;
}

void AugmentConfig::validate() const {
  if (!check_probability(flip_h) || !check_probability(flip_v) || !check_probability(rot90)) {
    throw ArgumentError("augment probabilities must lie in [0, 1]");
  }
  if (rotate_deg < 0 || shift_frac < 0 || shear_deg < 0) throw ArgumentError("augment magnitudes must be >= 0");
  if (!(zoom_min > 0) || zoom_max < zoom_min) throw ArgumentError("augment zoom range must satisfy 0 < min <= max");
  if (elastic && (!(elastic_sigma > 0) || elastic_alpha < 0)) {
    throw ArgumentError("elastic deformation needs sigma > 0 and alpha >= 0");
  }
}

SamplePair flip_horizontal(const SamplePair& s) {
  return {flip_plane(s.image, true), flip_plane(s.mask, true), s.id};
}

SamplePair flip_vertical(const SamplePair& s) {
  return {flip_plane(s.image, false), flip_plane(s.mask, false), s.id};
}

SamplePair rotate90(const SamplePair& s, int quarter_turns) {
  const int k = ((quarter_turns % 4) + 4) % 4;
  if (k % 2 == 1 && s.image.shape().h != s.image.shape().w) {
    throw ShapeError("rotate90: odd quarter turns need a square sample");
  }
  SamplePair out = s;
  for (int i = 0; i < k; ++i) {
    out.image = turn_plane(out.image);
    out.mask = turn_plane(out.mask);
  }
  return out;
}

SamplePair augment(const SamplePair& s, const AugmentConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto symmetric = [&](double mag) { return mag > 0 ? (2.0 * unit(rng) - 1.0) * mag : 0.0; };

  SamplePair out = s;
  if (cfg.flip_h > 0 && unit(rng) < cfg.flip_h) out = flip_horizontal(out);
  if (cfg.flip_v > 0 && unit(rng) < cfg.flip_v) out = flip_vertical(out);
  if (cfg.rot90 > 0 && unit(rng) < cfg.rot90) {
    const bool square = out.image.shape().h == out.image.shape().w;
    const int k = square ? 1 + static_cast<int>(unit(rng) * 3.0) : 2;
    out = rotate90(out, std::min(k, 3));
  }

  const double angle = symmetric(cfg.rotate_deg) * std::numbers::pi / 180.0;
  const double shear = symmetric(cfg.shear_deg) * std::numbers::pi / 180.0;
  const double zoom = cfg.zoom_max > cfg.zoom_min ? cfg.zoom_min + unit(rng) * (cfg.zoom_max - cfg.zoom_min)
                                                  : cfg.zoom_min;
  const Shape sh = out.image.shape();
  const double tx = symmetric(cfg.shift_frac) * static_cast<double>(sh.w);
  const double ty = symmetric(cfg.shift_frac) * static_cast<double>(sh.h);

  const bool identity = angle == 0.0 && shear == 0.0 && zoom == 1.0 && tx == 0.0 && ty == 0.0;
  if (!identity) {
    // Forward map about the image centre: rotation * shear * zoom, then shift.
    const double c = std::cos(angle), sn = std::sin(angle), k = std::tan(shear);
    const double a00 = zoom * c, a01 = zoom * (c * k - sn);
    const double a10 = zoom * sn, a11 = zoom * (sn * k + c);
    const double cx = (static_cast<double>(sh.w) - 1.0) / 2.0, cy = (static_cast<double>(sh.h) - 1.0) / 2.0;
    const cv::Matx23d m(a00, a01, cx - a00 * cx - a01 * cy + tx, a10, a11, cy - a10 * cx - a11 * cy + ty);
    const cv::Size size(static_cast<int>(sh.w), static_cast<int>(sh.h));
    cv::Mat img, msk;
    cv::warpAffine(to_mat(out.image), img, m, size, cv::INTER_LINEAR, cv::BORDER_REFLECT_101);
    cv::warpAffine(to_mat(out.mask), msk, m, size, cv::INTER_LINEAR, cv::BORDER_REFLECT_101);
    out.image = from_mat(img);
    out.mask = threshold(from_mat(msk), 0.5f);
  }

  if (cfg.elastic && cfg.elastic_alpha > 0) {
    const cv::Size size(static_cast<int>(sh.w), static_cast<int>(sh.h));
    cv::Mat dx(size, CV_32F), dy(size, CV_32F);
    for (int i = 0; i < size.height; ++i)
      for (int j = 0; j < size.width; ++j) {
        dx.at<float>(i, j) = static_cast<float>(2.0 * unit(rng) - 1.0);
        dy.at<float>(i, j) = static_cast<float>(2.0 * unit(rng) - 1.0);
      }
    cv::GaussianBlur(dx, dx, cv::Size(0, 0), cfg.elastic_sigma);
    cv::GaussianBlur(dy, dy, cv::Size(0, 0), cfg.elastic_sigma);
    cv::Mat map_x(size, CV_32F), map_y(size, CV_32F);
    for (int i = 0; i < size.height; ++i)
      for (int j = 0; j < size.width; ++j) {
        map_x.at<float>(i, j) = static_cast<float>(j + cfg.elastic_alpha * dx.at<float>(i, j));
        map_y.at<float>(i, j) = static_cast<float>(i + cfg.elastic_alpha * dy.at<float>(i, j));
      }
    cv::Mat img, msk;
    cv::remap(to_mat(out.image), img, map_x, map_y, cv::INTER_LINEAR, cv::BORDER_REFLECT_101);
    cv::remap(to_mat(out.mask), msk, map_x, map_y, cv::INTER_LINEAR, cv::BORDER_REFLECT_101);
    out.image = from_mat(img);
    out.mask = threshold(from_mat(msk), 0.5f);
  }

  for (float& v : out.image.values()) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

std::uint64_t sample_seed(std::uint64_t global_seed, const std::string& id, std::uint64_t epoch) {
  return splitmix64(splitmix64(global_seed ^ fnv1a(id)) + epoch);
}

double foreground_fraction(const Tensor<float>& mask) {
  if (mask.size() == 0) return 0.0;
  std::size_t on = 0;
  for (float v : mask.values()) on += v != 0.0f;
  return static_cast<double>(on) / static_cast<double>(mask.size());
}

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "unknown";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw ArgumentError("unknown split '" + name + "'");
}

std::vector<ManifestEntry> make_split(std::vector<std::string> ids, std::size_t val_count, std::size_t test_count,
                                      std::uint64_t seed) {
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) throw ArgumentError("make_split: duplicate ids");
  if (val_count + test_count > ids.size()) throw ArgumentError("make_split: held-out counts exceed sample count");
  std::vector<std::string> order = ids;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<ManifestEntry> out;
  out.reserve(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    const Split s = i < test_count ? Split::test : i < test_count + val_count ? Split::val : Split::train;
    out.push_back({order[i], s});
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return out;
}

void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& e : entries) j.push_back({{"id", e.id}, {"split", to_string(e.split)}});
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp);
    if (!f) throw IngestError("cannot write manifest " + path.string());
    f << j.dump(2) << '\n';
  }
  fs::rename(tmp, path);
}

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IngestError("cannot read manifest " + path.string());
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IngestError("manifest " + path.string() + ": " + e.what());
  }
  if (!j.is_array()) throw IngestError("manifest " + path.string() + " must be a JSON list");
  std::vector<ManifestEntry> out;
  std::set<std::string> seen;
  for (const auto& e : j) {
    if (!e.is_object() || !e.contains("id") || !e.contains("split") || !e["id"].is_string() ||
        !e["split"].is_string()) {
      throw IngestError("manifest entries need string 'id' and 'split'");
    }
    ManifestEntry m{e["id"].get<std::string>(), parse_split(e["split"].get<std::string>())};
    if (!seen.insert(m.id).second) throw IngestError("manifest lists '" + m.id + "' twice");
    out.push_back(std::move(m));
  }
  return out;
}

std::vector<SamplePair> select_split(const std::vector<SamplePair>& samples,
                                     const std::vector<ManifestEntry>& manifest, Split split) {
  std::set<std::string> wanted;
  for (const auto& e : manifest) {
    if (e.split == split) wanted.insert(e.id);
  }
  std::vector<SamplePair> out;
  for (const auto& s : samples) {
    if (wanted.count(s.id)) out.push_back(s);
  }
  if (out.size() != wanted.size()) throw IngestError("manifest names samples missing from the dataset");
  return out;
}

SampleBatch make_batch(std::span<const SamplePair> samples) {
  if (samples.empty()) throw ArgumentError("make_batch: empty batch");
  const Shape one = samples[0].image.shape();
  const Shape bs{samples.size(), one.c, one.h, one.w};
  SampleBatch b{Tensor<float>(bs), Tensor<float>(bs)};
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].image.shape() != one || samples[i].mask.shape() != one) {
      throw ShapeError("make_batch: sample '" + samples[i].id + "' has a different shape");
    }
    std::copy(samples[i].image.values().begin(), samples[i].image.values().end(), b.images.image(i).begin());
    std::copy(samples[i].mask.values().begin(), samples[i].mask.values().end(), b.masks.image(i).begin());
  }
  return b;
}

}  // namespace r2au
