#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "r2au/nn_blocks.hpp"

namespace r2au {

class CheckpointError : public Error {
 public:
  using Error::Error;
};

struct ModelConfig {
  std::size_t depth = 4;          // pooling stages
  std::size_t base_channels = 16; // channels of the shallowest stage
  std::size_t timesteps = 2;      // recurrent unrolling, counting p(0)
  std::size_t kernel = 3;         // main conv kernel side
  bool use_attention = true;
  bool use_residual = true;
  bool attend_first_skip = false;
  std::size_t input_channels = 1;
  std::size_t height = 256;
  std::size_t width = 256;
  InitScheme init = InitScheme::paper;

  /// Throws ArgumentError describing the first violated constraint.
  void validate() const;
  /// Channels at encoder stage k (k == depth is the bottleneck).
  std::size_t stage_channels(std::size_t k) const { return base_channels << k; }
  /// Ablation name, e.g. "recurrent_residual_attention_unet".
  std::string variant_name() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Recurrent residual U-Net with additive attention gates on the skips.
///
/// Encoder stage k: recurrent (residual) unit onto base*2^k channels, then 2x2
/// max-pool. Bottleneck: base*2^depth. Decoder stage k: 2x2 stride-2
/// transposed conv onto base*2^k, attention gate on the encoder skip (not on
/// the shallowest skip unless attend_first_skip), concat [skip, upsampled],
/// recurrent (residual) unit. Head: 1x1 conv and sigmoid.
template <typename T>
class R2AUNet {
 public:
  struct Block {
    RecurrentConvUnit<T> unit;
    std::optional<Var<T>> projection;  // 1x1, only with residual skips and a channel change
  };
  struct DecoderStage {
    Var<T> up_kernel;  // (out, in, 2, 2)
    Var<T> up_bias;    // (1, out, 1, 1)
    std::optional<AttentionGateParams<T>> gate;
    Block block;
  };

  static R2AUNet build(const ModelConfig& config, std::uint64_t seed);

  /// x: (n, input_channels, height, width) -> probabilities (n, 1, height, width).
  Var<T> forward(const Var<T>& x, Mode mode);
  /// Eval-mode forward without graph recording.
  Tensor<T> predict(const Tensor<T>& x);

  const ModelConfig& config() const { return config_; }
  const std::vector<Block>& encoder() const { return encoder_; }
  const Block& bottleneck() const { return bottleneck_; }
  /// Decoder stages, deepest first.
  const std::vector<DecoderStage>& decoder() const { return decoder_; }
  /// Whether the skip at encoder level k carries an attention gate.
  bool has_gate(std::size_t level) const;

  /// Parameters and buffers in a fixed order with stable names.
  ParamRegistry<T> registry();
  std::size_t parameter_count();

  /// Alpha maps of the most recent forward pass, keyed by encoder level.
  const std::vector<std::pair<std::size_t, Tensor<T>>>& last_attention() const { return last_alpha_; }

 private:
  Var<T> run_block(Block& b, const Var<T>& x, Mode mode);

  ModelConfig config_;
  std::vector<Block> encoder_;
  Block bottleneck_;
  std::vector<DecoderStage> decoder_;
  Var<T> head_kernel_;
  Var<T> head_bias_;
  std::vector<std::pair<std::size_t, Tensor<T>>> last_alpha_;
};

/// probability >= threshold -> 1, else 0. threshold must lie in (0, 1).
template <typename T>
Tensor<T> binarize(const Tensor<T>& probabilities, T threshold = T(0.5));

template <typename T>
Tensor<T> predict_mask(R2AUNet<T>& model, const Tensor<T>& x, T threshold = T(0.5));

/// Copies every parameter and buffer between models of identical structure.
template <typename From, typename To>
void copy_weights(R2AUNet<From>& from, R2AUNet<To>& to);

// Checkpoint file:
//   "R2AU" | u32 version (LE) | u64 header length (LE) | UTF-8 JSON header |
//   raw little-endian float32 blobs in manifest order.
// The header holds {"config": ModelConfig, "tensors": [{name, kind, shape,
// offset}]}, offsets in bytes from the start of the blob section.
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Written to a temporary sibling and renamed into place.
template <typename T>
void save_checkpoint(const std::filesystem::path& path, R2AUNet<T>& model);
template <typename T>
R2AUNet<T> load_checkpoint(const std::filesystem::path& path);
ModelConfig read_checkpoint_config(const std::filesystem::path& path);

}  // namespace r2au
