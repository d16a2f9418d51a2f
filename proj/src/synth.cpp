#include <cmath>
#include <cstdio>
#include <numbers>

#include "r2au/data.hpp"

namespace r2au {

namespace {

struct Disc {
  double cy, cx, r, amp;
};

// Blob counts whose mean radius for the area budget lies inside the radius range.
std::pair<std::size_t, std::size_t> feasible_counts(const SynthConfig& cfg) {
  const double area = cfg.imbalance_target * static_cast<double>(cfg.image_size * cfg.image_size);
  const double big = std::numbers::pi * cfg.blob_radius_max * cfg.blob_radius_max;
  const double small = std::numbers::pi * cfg.blob_radius_min * cfg.blob_radius_min;
  const auto lo = std::max(cfg.blob_count_min, static_cast<std::size_t>(std::ceil(area / big)));
  const auto hi = std::min(cfg.blob_count_max, static_cast<std::size_t>(std::floor(area / small)));
  return {lo, hi};
}

}  // namespace

void SynthConfig::validate() const {
  if (n_samples == 0) throw ArgumentError("synth: n_samples must be >= 1");
  if (image_size < 4) throw ArgumentError("synth: image_size must be >= 4");
  if (blob_count_min == 0 || blob_count_max < blob_count_min) {
    throw ArgumentError("synth: blob count range must satisfy 1 <= min <= max");
  }
  if (!(blob_radius_min > 0) || blob_radius_max < blob_radius_min) {
    throw ArgumentError("synth: blob radius range must satisfy 0 < min <= max");
  }
  if (!(noise_level >= 0)) throw ArgumentError("synth: noise_level must be >= 0");
  if (!(imbalance_target > 0 && imbalance_target < 0.5)) {
    throw ArgumentError("synth: imbalance_target must lie in (0, 0.5)");
  }
  if (!(background >= 0) || !(amplitude_min > 0) || amplitude_max < amplitude_min ||
      background + amplitude_max > 1.0) {
    throw ArgumentError("synth: need background >= 0, 0 < amplitude_min <= amplitude_max, background + max <= 1");
  }
  if (!(edge_softness > 0)) throw ArgumentError("synth: edge_softness must be > 0");
  const auto [lo, hi] = feasible_counts(*this);
  if (lo > hi) {
    throw GenerationError("synth: foreground fraction " + std::to_string(imbalance_target) +
                          " is unreachable with the given blob count and radius ranges");
  }
  if (2.0 * blob_radius_min + 2.0 > static_cast<double>(image_size)) {
    throw GenerationError("synth: blobs do not fit in the image");
  }
}

std::vector<SynthSample> synth_blob_instances(const SynthConfig& cfg) {
  cfg.validate();
  const auto [count_lo, count_hi] = feasible_counts(cfg);
  const std::size_t n = cfg.image_size;
  const double area = cfg.imbalance_target * static_cast<double>(n * n);

  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);

  std::vector<SynthSample> out;
  out.reserve(cfg.n_samples);
  for (std::size_t s = 0; s < cfg.n_samples; ++s) {
    const std::size_t k = count_lo + static_cast<std::size_t>(unit(rng) * static_cast<double>(count_hi - count_lo + 1));
    const std::size_t blobs = std::min(k, count_hi);

    std::vector<Disc> discs;
    for (std::size_t b = 0; b < blobs; ++b) {
      const double share = area / static_cast<double>(blobs) * (0.7 + 0.6 * unit(rng));
      double r = std::sqrt(share / std::numbers::pi);
      r = std::clamp(r, cfg.blob_radius_min, std::min(cfg.blob_radius_max, static_cast<double>(n) / 2.0 - 1.0));
      const double amp = cfg.amplitude_min + unit(rng) * (cfg.amplitude_max - cfg.amplitude_min);
      const double span = static_cast<double>(n) - 1.0 - 2.0 * r;
      for (int attempt = 0; attempt < 200; ++attempt) {
        const Disc d{r + unit(rng) * span, r + unit(rng) * span, r, amp};
        bool clear = true;
        for (const auto& o : discs) {
          const double gap = std::hypot(d.cy - o.cy, d.cx - o.cx) - d.r - o.r;
          if (gap < 2.0) {
            clear = false;
            break;
          }
        }
        if (clear) {
          discs.push_back(d);
          break;
        }
      }
    }
    if (discs.empty()) throw GenerationError("synth: could not place any blob in sample " + std::to_string(s));

    SynthSample sample;
    char id[32];
    std::snprintf(id, sizeof(id), "synth_%05zu", s);
    sample.pair.id = id;
    const Shape shape{1, 1, n, n};
    std::vector<double> intensity(n * n, cfg.background);
    sample.pair.mask = Tensor<float>(shape);
    for (const auto& d : discs) {
      Tensor<float> inst(shape);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double dist = std::hypot(static_cast<double>(i) - d.cy, static_cast<double>(j) - d.cx);
          intensity[i * n + j] += d.amp * (1.0 - std::tanh((dist - d.r) / cfg.edge_softness)) / 2.0;
          if (dist <= d.r) inst[i * n + j] = 1.0f;
        }
      for (std::size_t i = 0; i < inst.size(); ++i) {
        if (inst[i] != 0.0f) sample.pair.mask[i] = 1.0f;
      }
      sample.instance_masks.push_back(std::move(inst));
    }
    sample.pair.image = Tensor<float>(shape);
    for (std::size_t i = 0; i < n * n; ++i) {
      const double v = intensity[i] + (cfg.noise_level > 0 ? cfg.noise_level * noise(rng) : 0.0);
      sample.pair.image[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
    out.push_back(std::move(sample));
  }
  return out;
}

std::vector<SamplePair> synth_blobs(const SynthConfig& cfg) {
  std::vector<SamplePair> out;
  for (auto& s : synth_blob_instances(cfg)) out.push_back(std::move(s.pair));
  return out;
}

void write_dsb_layout(const std::filesystem::path& out, const std::vector<SynthSample>& samples) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out)) throw IngestError("cannot create output directory " + out.string());
  for (const auto& s : samples) {
    const fs::path dir = out / s.pair.id;
    fs::create_directories(dir / "images", ec);
    fs::create_directories(dir / "masks", ec);
    if (ec) throw IngestError("cannot create " + dir.string() + ": " + ec.message());
    write_grayscale_png(dir / "images" / (s.pair.id + ".png"), s.pair.image);
    for (std::size_t k = 0; k < s.instance_masks.size(); ++k) {
      write_mask_png(dir / "masks" / (s.pair.id + "_" + std::to_string(k) + ".png"), s.instance_masks[k]);
    }
  }
}

}  // namespace r2au
