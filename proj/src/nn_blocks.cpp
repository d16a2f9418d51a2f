#include "r2au/nn_blocks.hpp"

#include <cmath>

namespace r2au {

std::string to_string(InitScheme s) { return s == InitScheme::paper ? "paper" : "kaiming"; }

InitScheme parse_init_scheme(const std::string& name) {
  if (name == "paper") return InitScheme::paper;
  if (name == "kaiming") return InitScheme::kaiming;
  throw ArgumentError("unknown init scheme '" + name + "' (expected paper or kaiming)");
}

template <typename T>
BatchNormParams<T> BatchNormParams<T>::make(std::size_t channels, std::size_t slots) {
  BatchNormParams p;
  const Shape s{1, channels, 1, 1};
  p.scale = Var<T>(Tensor<T>(s, T{1}), true);
  p.shift = Var<T>(Tensor<T>(s, T{0}), true);
  p.running.assign(std::max<std::size_t>(slots, 1), RunningStats<T>{Tensor<T>(s, T{0}), Tensor<T>(s, T{1})});
  return p;
}

template <typename T>
void BatchNormParams<T>::collect(const std::string& prefix, ParamRegistry<T>& reg) {
  reg.add(prefix + ".scale", scale);
  reg.add(prefix + ".shift", shift);
  for (std::size_t i = 0; i < running.size(); ++i) {
    reg.add_buffer(prefix + ".running_mean." + std::to_string(i), &running[i].mean);
    reg.add_buffer(prefix + ".running_var." + std::to_string(i), &running[i].var);
  }
}

template <typename T>
Var<T> batch_norm(const Var<T>& x, BatchNormParams<T>& p, Mode mode, std::size_t slot) {
  const Shape xs = x.shape();
  if (xs.c != p.channels()) {
    throw ShapeError("batch_norm: input has " + std::to_string(xs.c) + " channels, parameters have " +
                     std::to_string(p.channels()));
  }
  if (slot >= p.running.size()) throw ArgumentError("batch_norm: running-stat slot out of range");
  if (!(p.eps > T{0})) throw ArgumentError("batch_norm: eps must be positive");

  const std::size_t plane = xs.plane();
  const std::size_t m = xs.n * plane;
  std::vector<T> mean(xs.c), inv_std(xs.c);
  RunningStats<T>& run = p.running[slot];

  if (mode == Mode::train) {
    if (m < 2) throw ShapeError("batch_norm: train mode needs at least 2 values per channel");
    for (std::size_t c = 0; c < xs.c; ++c) {
      T acc = 0;
      for (std::size_t n = 0; n < xs.n; ++n) {
        const T* v = x.value().data() + (n * xs.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) acc += v[i];
      }
      const T mu = acc / static_cast<T>(m);
      T sq = 0;
      for (std::size_t n = 0; n < xs.n; ++n) {
        const T* v = x.value().data() + (n * xs.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) sq += (v[i] - mu) * (v[i] - mu);
      }
      const T var = sq / static_cast<T>(m);
      mean[c] = mu;
      inv_std[c] = T{1} / std::sqrt(var + p.eps);
      run.mean[c] = p.momentum * run.mean[c] + (T{1} - p.momentum) * mu;
      run.var[c] = p.momentum * run.var[c] +
                   (T{1} - p.momentum) * var * static_cast<T>(m) / static_cast<T>(m - 1);
    }
  } else {
    for (std::size_t c = 0; c < xs.c; ++c) {
      mean[c] = run.mean[c];
      inv_std[c] = T{1} / std::sqrt(run.var[c] + p.eps);
    }
  }

  Tensor<T> out(xs);
  for (std::size_t n = 0; n < xs.n; ++n)
    for (std::size_t c = 0; c < xs.c; ++c) {
      const std::size_t off = (n * xs.c + c) * plane;
      const T a = p.scale.value()[c] * inv_std[c];
      const T b = p.shift.value()[c] - a * mean[c];
      for (std::size_t i = 0; i < plane; ++i) out[off + i] = a * x.value()[off + i] + b;
    }

  const bool train = mode == Mode::train;
  return Var<T>::make(
      std::move(out), {x, p.scale, p.shift},
      [mean = std::move(mean), inv_std = std::move(inv_std), train, m](Node<T>& self) {
        Node<T>& xn = self.parent(0);
        Node<T>& sn = self.parent(1);
        Node<T>& bn = self.parent(2);
        const Shape xs = xn.value.shape();
        const std::size_t plane = xs.plane();
        for (std::size_t c = 0; c < xs.c; ++c) {
          T sum_g = 0, sum_gx = 0;
          for (std::size_t n = 0; n < xs.n; ++n) {
            const std::size_t off = (n * xs.c + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              const T g = self.grad[off + i];
              sum_g += g;
              sum_gx += g * (xn.value[off + i] - mean[c]) * inv_std[c];
            }
          }
          if (sn.requires_grad) sn.grad_buffer()[c] += sum_gx;
          if (bn.requires_grad) bn.grad_buffer()[c] += sum_g;
          if (!xn.requires_grad) continue;
          Tensor<T>& gx = xn.grad_buffer();
          const T scale = sn.value[c];
          if (train) {
            const T k = scale * inv_std[c] / static_cast<T>(m);
            const T mg = sum_g, mgx = sum_gx;
            for (std::size_t n = 0; n < xs.n; ++n) {
              const std::size_t off = (n * xs.c + c) * plane;
              for (std::size_t i = 0; i < plane; ++i) {
                const T xhat = (xn.value[off + i] - mean[c]) * inv_std[c];
                gx[off + i] += k * (static_cast<T>(m) * self.grad[off + i] - mg - xhat * mgx);
              }
            }
          } else {
            const T k = scale * inv_std[c];
            for (std::size_t n = 0; n < xs.n; ++n) {
              const std::size_t off = (n * xs.c + c) * plane;
              for (std::size_t i = 0; i < plane; ++i) gx[off + i] += k * self.grad[off + i];
            }
          }
        }
      });
}

template <typename T>
RecurrentConvUnit<T> RecurrentConvUnit<T>::make(std::size_t in_channels, std::size_t out_channels,
                                                std::size_t kernel, std::size_t timesteps,
                                                std::mt19937_64& rng, InitScheme init) {
  if (in_channels == 0 || out_channels == 0 || kernel == 0) {
    throw ArgumentError("recurrent unit needs positive channel counts and kernel size");
  }
  if (timesteps == 0) throw ArgumentError("recurrent unit needs at least one timestep");
  RecurrentConvUnit u;
  u.theta_g = Var<T>(he_init<T>(Shape{out_channels, in_channels, kernel, kernel},
                                in_channels * kernel * kernel, rng, init),
                     true);
  u.theta_r = Var<T>(he_init<T>(Shape{out_channels, out_channels, kernel, kernel},
                                out_channels * kernel * kernel, rng, init),
                     true);
  u.bias = Var<T>(Tensor<T>(Shape{1, out_channels, 1, 1}), true);
  u.timesteps = timesteps;
  u.bn = BatchNormParams<T>::make(out_channels, timesteps);
  return u;
}

template <typename T>
void RecurrentConvUnit<T>::collect(const std::string& prefix, ParamRegistry<T>& reg) {
  reg.add(prefix + ".theta_g", theta_g);
  if (timesteps > 1) reg.add(prefix + ".theta_r", theta_r);  // unused by a single-step unit
  reg.add(prefix + ".bias", bias);
  bn.collect(prefix + ".bn", reg);
}

template <typename T>
Var<T> recurrent_conv_forward(const Var<T>& x, RecurrentConvUnit<T>& u, Mode mode) {
  if (x.shape().c != u.in_channels()) {
    throw ShapeError("recurrent unit expects " + std::to_string(u.in_channels()) + " input channels, got " +
                     std::to_string(x.shape().c));
  }
  if (u.timesteps == 0) throw ArgumentError("recurrent unit needs at least one timestep");
  const ConvSpec same{1, Padding::same};
  const Var<T> feedforward = add_channel_bias(conv2d(x, u.theta_g, same), u.bias);
  Var<T> state = batch_norm(relu(feedforward), u.bn, mode, 0);
  for (std::size_t t = 1; t < u.timesteps; ++t) {
    const Var<T> z = add(feedforward, conv2d(state, u.theta_r, same));
    state = batch_norm(relu(z), u.bn, mode, t);
  }
  return state;
}

template <typename T>
Var<T> recurrent_residual_forward(const Var<T>& x, RecurrentConvUnit<T>& u,
                                  const std::optional<Var<T>>& projection, Mode mode) {
  Var<T> skip = x;
  if (projection) {
    const Shape ps = projection->shape();
    if (ps.h != 1 || ps.w != 1 || ps.n != u.out_channels()) {
      throw ShapeError("residual projection must be 1x1 onto " + std::to_string(u.out_channels()) +
                       " channels, got " + to_string(ps));
    }
    skip = conv2d(x, *projection, ConvSpec{1, Padding::same});
  } else if (x.shape().c != u.out_channels()) {
    throw ShapeError("residual skip: " + std::to_string(x.shape().c) + " input channels vs " +
                     std::to_string(u.out_channels()) + " output channels and no projection");
  }
  return add(skip, recurrent_conv_forward(x, u, mode));
}

template <typename T>
AttentionGateParams<T> AttentionGateParams<T>::make(std::size_t encoder_channels, std::size_t decoder_channels,
                                                    std::size_t inter_channels, std::mt19937_64& rng,
                                                    InitScheme init) {
  if (encoder_channels == 0 || decoder_channels == 0 || inter_channels == 0) {
    throw ArgumentError("attention gate needs positive channel counts");
  }
  AttentionGateParams p;
  p.w_att = Var<T>(he_init<T>(Shape{inter_channels, encoder_channels, 1, 1}, encoder_channels, rng, init), true);
  p.u_att = Var<T>(he_init<T>(Shape{inter_channels, decoder_channels, 1, 1}, decoder_channels, rng, init), true);
  p.psi = Var<T>(he_init<T>(Shape{1, inter_channels, 1, 1}, inter_channels, rng, init), true);
  p.b_g = Var<T>(Tensor<T>(Shape{1, inter_channels, 1, 1}), true);
  p.b_psi = Var<T>(Tensor<T>(Shape{1, 1, 1, 1}), true);
  return p;
}

template <typename T>
void AttentionGateParams<T>::collect(const std::string& prefix, ParamRegistry<T>& reg) {
  reg.add(prefix + ".w_att", w_att);
  reg.add(prefix + ".u_att", u_att);
  reg.add(prefix + ".psi", psi);
  reg.add(prefix + ".b_g", b_g);
  reg.add(prefix + ".b_psi", b_psi);
}

template <typename T>
GateOutput<T> attention_gate(const Var<T>& h, const Var<T>& s, const AttentionGateParams<T>& p) {
  const Shape hs = h.shape(), ss = s.shape();
  if (hs.n != ss.n || hs.h != ss.h || hs.w != ss.w) {
    throw ShapeError("attention_gate: encoder " + to_string(hs) + " and decoder " + to_string(ss) +
                     " differ spatially");
  }
  const ConvSpec pointwise{1, Padding::same};
  const Var<T> joint = add_channel_bias(add(conv2d(s, p.u_att, pointwise), conv2d(h, p.w_att, pointwise)), p.b_g);
  const Var<T> q = add_channel_bias(conv2d(tanh(joint), p.psi, pointwise), p.b_psi);
  const Var<T> alpha = sigmoid(q);
  return {scale_by_map(h, alpha), alpha};
}

template <typename T>
Tensor<T> he_init(Shape shape, std::size_t fan_in, std::mt19937_64& rng, InitScheme init) {
  if (fan_in == 0) throw ArgumentError("he_init: fan_in must be positive");
  const double n = static_cast<double>(fan_in);
  std::normal_distribution<double> dist(0.0, init == InitScheme::paper ? 2.0 / std::sqrt(n) : std::sqrt(2.0 / n));
  Tensor<T> out(shape);
  for (T& v : out.values()) v = static_cast<T>(dist(rng));
  return out;
}

template <typename T>
Tensor<T> he_init(Shape shape, std::size_t fan_in, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return he_init<T>(shape, fan_in, rng);
}

#define R2AU_INSTANTIATE_BLOCKS(T)                                                                       \
  template struct BatchNormParams<T>;                                                                    \
  template struct RecurrentConvUnit<T>;                                                                  \
  template struct AttentionGateParams<T>;                                                                \
  template Var<T> batch_norm<T>(const Var<T>&, BatchNormParams<T>&, Mode, std::size_t);                  \
  template Var<T> recurrent_conv_forward<T>(const Var<T>&, RecurrentConvUnit<T>&, Mode);                 \
  template Var<T> recurrent_residual_forward<T>(const Var<T>&, RecurrentConvUnit<T>&,                    \
                                                const std::optional<Var<T>>&, Mode);                     \
  template GateOutput<T> attention_gate<T>(const Var<T>&, const Var<T>&, const AttentionGateParams<T>&); \
  template Tensor<T> he_init<T>(Shape, std::size_t, std::mt19937_64&, InitScheme);                      \
  template Tensor<T> he_init<T>(Shape, std::size_t, std::uint64_t);

R2AU_INSTANTIATE_BLOCKS(float)
R2AU_INSTANTIATE_BLOCKS(double)

}  // namespace r2au
