#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "r2au/ops.hpp"

namespace r2au {

enum class Mode { train, eval };

/// Weight scale. paper: std 2/sqrt(N) as printed. kaiming: std sqrt(2/N),
/// which keeps ReLU feature maps near unit variance.
enum class InitScheme { paper, kaiming };

std::string to_string(InitScheme s);
InitScheme parse_init_scheme(const std::string& name);

/// Named view over the trainable parameters and state buffers of a block.
template <typename T>
struct ParamRegistry {
  std::vector<std::pair<std::string, Var<T>>> params;
  std::vector<std::pair<std::string, Tensor<T>*>> buffers;

  void add(std::string name, const Var<T>& v) { params.emplace_back(std::move(name), v); }
  void add_buffer(std::string name, Tensor<T>* t) { buffers.emplace_back(std::move(name), t); }
  std::size_t parameter_count() const {
    std::size_t total = 0;
    for (const auto& [name, v] : params) total += v.value().size();
    return total;
  }
};

template <typename T>
struct RunningStats {
  Tensor<T> mean;  // (1, C, 1, 1)
  Tensor<T> var;   // (1, C, 1, 1)
};

/// Batch-norm scale/shift with running statistics.
///
/// `running` holds one slot per call site sharing these parameters; the
/// recurrent unit normalizes each timestep with the same scale and shift but
/// keeps separate population statistics per timestep.
template <typename T>
struct BatchNormParams {
  Var<T> scale;
  Var<T> shift;
  T eps = T(1e-5);
  T momentum = T(0.9);
  std::vector<RunningStats<T>> running;

  static BatchNormParams make(std::size_t channels, std::size_t slots = 1);
  std::size_t channels() const { return scale.value().size(); }
  void collect(const std::string& prefix, ParamRegistry<T>& reg);
};

/// Train mode normalizes over (n, h, w) with the batch mean and biased
/// variance and folds them into running slot `slot` (unbiased variance);
/// eval mode uses that slot's running statistics.
template <typename T>
Var<T> batch_norm(const Var<T>& x, BatchNormParams<T>& p, Mode mode, std::size_t slot = 0);

/// Convolution unrolled over discrete timesteps:
///   p(0) = BN(ReLU(g * x + b))
///   p(t) = BN(ReLU(g * x + r * p(t-1) + b)),  t = 1 .. timesteps-1
/// With timesteps == 1 this is a plain conv-ReLU-BN block.
template <typename T>
struct RecurrentConvUnit {
  Var<T> theta_g;  // (out, in, k, k)
  Var<T> theta_r;  // (out, out, k, k)
  Var<T> bias;     // (1, out, 1, 1)
  std::size_t timesteps = 2;
  BatchNormParams<T> bn;

  static RecurrentConvUnit make(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                                std::size_t timesteps, std::mt19937_64& rng,
                                InitScheme init = InitScheme::paper);
  std::size_t in_channels() const { return theta_g.shape().c; }
  std::size_t out_channels() const { return theta_g.shape().n; }
  void collect(const std::string& prefix, ParamRegistry<T>& reg);
};

template <typename T>
Var<T> recurrent_conv_forward(const Var<T>& x, RecurrentConvUnit<T>& u, Mode mode);

/// skip(x) + recurrent_conv_forward(x, u). skip is the identity, or the 1x1
/// `projection` kernel (out, in, 1, 1) when channel counts differ.
template <typename T>
Var<T> recurrent_residual_forward(const Var<T>& x, RecurrentConvUnit<T>& u,
                                  const std::optional<Var<T>>& projection, Mode mode);

/// Additive attention gate. h: encoder features (n, F_h, H, W); s: decoder
/// state (n, F_s, H, W).
template <typename T>
struct AttentionGateParams {
  Var<T> w_att;  // (D, F_h, 1, 1)
  Var<T> u_att;  // (D, F_s, 1, 1)
  Var<T> psi;    // (1, D, 1, 1)
  Var<T> b_g;    // (1, D, 1, 1)
  Var<T> b_psi;  // (1, 1, 1, 1)

  static AttentionGateParams make(std::size_t encoder_channels, std::size_t decoder_channels,
                                  std::size_t inter_channels, std::mt19937_64& rng,
                                  InitScheme init = InitScheme::paper);
  std::size_t inter_channels() const { return w_att.shape().n; }
  void collect(const std::string& prefix, ParamRegistry<T>& reg);
};

template <typename T>
struct GateOutput {
  Var<T> gated;  // h scaled by alpha, (n, F_h, H, W)
  Var<T> alpha;  // (n, 1, H, W), values in [0, 1]
};

/// q = psi * tanh(U s + W h + b_g) + b_psi, alpha = sigmoid(q), gated = h * alpha.
template <typename T>
GateOutput<T> attention_gate(const Var<T>& h, const Var<T>& s, const AttentionGateParams<T>& p);

/// Gaussian(0, (2 / sqrt(fan_in))^2) draws, or (sqrt(2 / fan_in))^2 under kaiming.
template <typename T>
Tensor<T> he_init(Shape shape, std::size_t fan_in, std::mt19937_64& rng, InitScheme init = InitScheme::paper);
template <typename T>
Tensor<T> he_init(Shape shape, std::size_t fan_in, std::uint64_t seed);

}  // namespace r2au
