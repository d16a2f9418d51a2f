#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "r2au/tensor.hpp"

namespace r2au {

class IngestError : public Error {
 public:
  using Error::Error;
};

class GenerationError : public Error {
 public:
  using Error::Error;
};

/// Grayscale image in [0, 1] and its aligned binary mask, both (1, 1, H, W).
struct SamplePair {
  Tensor<float> image;
  Tensor<float> mask;
  std::string id;
};

// ---- image I/O -------------------------------------------------------------

/// Reads an 8/16-bit grayscale, RGB or RGBA PNG as luminance
/// 0.299 R + 0.587 G + 0.114 B in [0, 1]; alpha is ignored.
Tensor<float> read_grayscale_png(const std::filesystem::path& path);
/// 8-bit grayscale PNG, values in [0, 1] scaled to [0, 255].
void write_grayscale_png(const std::filesystem::path& path, const Tensor<float>& image);
/// 8-bit PNG with foreground 255 and background 0.
void write_mask_png(const std::filesystem::path& path, const Tensor<float>& mask);

/// Bilinear resampling of each (n, c) plane to height x width.
Tensor<float> resize_bilinear(const Tensor<float>& t, std::size_t height, std::size_t width);
/// value >= level -> 1, else 0.
Tensor<float> threshold(const Tensor<float>& t, float level = 0.5f);

// ---- ingestion -------------------------------------------------------------

/// Elementwise logical OR of equally shaped binary masks.
Tensor<float> merge_masks(std::span<const Tensor<float>> masks);

/// One sample of the `<id>/images/<id>.png` + `<id>/masks/*.png` layout:
/// grayscale, OR-merged masks, both resized to size x size, mask re-binarized
/// at 0.5. Throws IngestError naming the sample.
SamplePair load_dsb_sample(const std::filesystem::path& sample_dir, std::size_t size = 256);
/// All sample directories under root, sorted by id.
std::vector<SamplePair> load_dsb2018(const std::filesystem::path& root, std::size_t size = 256);

// ---- augmentation ----------------------------------------------------------

struct AugmentConfig {
  double flip_h = 0.5;      // probability
  double flip_v = 0.5;      // probability
  double rot90 = 0.0;       // probability of a random quarter turn
  double rotate_deg = 30.0; // max |angle|
  double shift_frac = 0.1;  // max |shift| as a fraction of the side
  double zoom_min = 0.9;
  double zoom_max = 1.1;
  double shear_deg = 10.0;  // max |shear angle|
  bool elastic = false;
  double elastic_alpha = 34.0;
  double elastic_sigma = 4.0;

  /// All probabilities and magnitudes zero: augment() is the identity.
  static AugmentConfig none();
  void validate() const;
  friend bool operator==(const AugmentConfig&, const AugmentConfig&) = default;
};

/// Applies one random geometric transform to image and mask together; the
/// mask is re-binarized. Deterministic for a given rng state.
SamplePair augment(const SamplePair& s, const AugmentConfig& cfg, std::mt19937_64& rng);

SamplePair flip_horizontal(const SamplePair& s);
SamplePair flip_vertical(const SamplePair& s);
/// Quarter turns counter-clockwise; odd turns need a square sample.
SamplePair rotate90(const SamplePair& s, int quarter_turns);

/// Seed for one sample's transform in one epoch; independent of visiting order.
std::uint64_t sample_seed(std::uint64_t global_seed, const std::string& id, std::uint64_t epoch);

// ---- synthetic nuclei ------------------------------------------------------

struct SynthConfig {
  std::size_t n_samples = 64;
  std::size_t image_size = 64;
  std::size_t blob_count_min = 1;
  std::size_t blob_count_max = 8;
  double blob_radius_min = 2.0;
  double blob_radius_max = 12.0;
  double noise_level = 0.05;      // Gaussian noise std
  double imbalance_target = 0.08; // desired foreground fraction
  double background = 0.1;
  double amplitude_min = 0.5;
  double amplitude_max = 0.9;
  double edge_softness = 1.0;     // tanh edge width in pixels
  std::uint64_t seed = 0;

  void validate() const;
};

/// A generated sample with the per-blob masks that make up its mask.
struct SynthSample {
  SamplePair pair;
  std::vector<Tensor<float>> instance_masks;
};

/// Soft-edged bright discs on a noisy background. A blob's mask is
/// {d <= r}; its intensity is amp * (1 - tanh((d - r) / softness)) / 2 over
/// the background, so the noiseless image crosses background + amp/2 exactly
/// at the mask boundary. Throws GenerationError when the requested
/// foreground fraction cannot be met with the blob count/radius ranges.
std::vector<SynthSample> synth_blob_instances(const SynthConfig& cfg);
std::vector<SamplePair> synth_blobs(const SynthConfig& cfg);

/// Writes `<out>/<id>/images/<id>.png` and one `<out>/<id>/masks/<id>_<k>.png`
/// per blob.
void write_dsb_layout(const std::filesystem::path& out, const std::vector<SynthSample>& samples);

double foreground_fraction(const Tensor<float>& mask);

// ---- splits ----------------------------------------------------------------

enum class Split { train, val, test };
std::string to_string(Split s);
Split parse_split(const std::string& name);

struct ManifestEntry {
  std::string id;
  Split split;
};

/// Seeded shuffle of ids into disjoint train/val/test groups of the given
/// sizes (train takes the rest). Result is sorted by id.
std::vector<ManifestEntry> make_split(std::vector<std::string> ids, std::size_t val_count,
                                      std::size_t test_count, std::uint64_t seed);
/// JSON list of {"id", "split"} objects.
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
std::vector<SamplePair> select_split(const std::vector<SamplePair>& samples,
                                     const std::vector<ManifestEntry>& manifest, Split split);

/// Stacks samples [first, first + count) into (count, 1, H, W) image and mask tensors.
struct SampleBatch {
  Tensor<float> images;
  Tensor<float> masks;
};
SampleBatch make_batch(std::span<const SamplePair> samples);

}  // namespace r2au
