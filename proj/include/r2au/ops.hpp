#pragma once

#include <cstddef>

#include "r2au/autodiff.hpp"

namespace r2au {

enum class Padding { same, valid };

/// Stride and padding of a 2-D convolution. The kernel itself is a tensor of
/// shape (out_ch, in_ch, kh, kw) passed alongside.
struct ConvSpec {
  std::size_t stride = 1;
  Padding padding = Padding::same;
};

/// Resolved spatial arithmetic of one convolution. `in_*` is the padded
/// image side, `out_*` the sliding-window grid.
struct ConvGeometry {
  std::size_t in_h, in_w;
  std::size_t kh, kw;
  std::size_t stride;
  std::size_t pad_top, pad_left;
  std::size_t out_h, out_w;
};

/// "same": out = ceil(in / stride), zero padding split symmetrically with the
/// odd pixel on the bottom/right. "valid": no padding.
ConvGeometry conv_geometry(std::size_t in_h, std::size_t in_w, std::size_t kh, std::size_t kw,
                           const ConvSpec& spec);

enum class Activation { relu, sigmoid, tanh };

/// Wraps a tensor that never receives gradients.
template <typename T>
Var<T> constant(Tensor<T> value) {
  return Var<T>(std::move(value), false);
}

// Elementwise arithmetic. Operands have equal shapes, or one of them holds a
// single element which is broadcast.
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> div(const Var<T>& a, const Var<T>& b);

/// scale * a + shift
template <typename T> Var<T> affine(const Var<T>& a, T scale, T shift);
template <typename T> Var<T> log(const Var<T>& a);
/// a^p for a > 0.
template <typename T> Var<T> pow(const Var<T>& a, T p);
/// Gradient passes where lo <= a <= hi.
template <typename T> Var<T> clamp(const Var<T>& a, T lo, T hi);

template <typename T> Var<T> sum(const Var<T>& a);
template <typename T> Var<T> mean(const Var<T>& a);

/// Sigmoid output is kept strictly inside (0, 1) even where the type rounds.
template <typename T> Var<T> activation(const Var<T>& x, Activation kind);
template <typename T> Var<T> relu(const Var<T>& x) { return activation(x, Activation::relu); }
template <typename T> Var<T> sigmoid(const Var<T>& x) { return activation(x, Activation::sigmoid); }
template <typename T> Var<T> tanh(const Var<T>& x) { return activation(x, Activation::tanh); }

/// Cross-correlation; kernel shape (out_ch, in_ch, kh, kw).
template <typename T> Var<T> conv2d(const Var<T>& x, const Var<T>& kernel, const ConvSpec& spec = {});

/// Adjoint of conv2d with the kernel's channel axes swapped: kernel shape is
/// (out_ch, in_ch, kh, kw) with in_ch == x.c. "valid" gives (H-1)*s + kh,
/// "same" gives H*s.
template <typename T>
Var<T> conv2d_transpose(const Var<T>& x, const Var<T>& kernel, const ConvSpec& spec = {2, Padding::valid});

/// bias has shape (1, C, 1, 1).
template <typename T> Var<T> add_channel_bias(const Var<T>& x, const Var<T>& bias);

/// 2x2 window, stride 2. Ties route the gradient to the first element in
/// row-major window order.
template <typename T> Var<T> maxpool2d(const Var<T>& x);

template <typename T> Var<T> concat_channels(const Var<T>& a, const Var<T>& b);

/// x (n, C, h, w) times map (n, 1, h, w), broadcast over channels.
template <typename T> Var<T> scale_by_map(const Var<T>& x, const Var<T>& map);

template <typename T> Var<T> operator+(const Var<T>& a, const Var<T>& b) { return add(a, b); }
template <typename T> Var<T> operator-(const Var<T>& a, const Var<T>& b) { return sub(a, b); }
template <typename T> Var<T> operator*(const Var<T>& a, const Var<T>& b) { return mul(a, b); }
template <typename T> Var<T> operator/(const Var<T>& a, const Var<T>& b) { return div(a, b); }
template <typename T> Var<T> operator*(T s, const Var<T>& a) { return affine(a, s, T{0}); }
template <typename T> Var<T> operator+(const Var<T>& a, T s) { return affine(a, T{1}, s); }
/// s - a
template <typename T> Var<T> operator-(T s, const Var<T>& a) { return affine(a, T{-1}, s); }

}  // namespace r2au
