#include "r2au/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

namespace r2au {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

// Broadcast layout of a binary elementwise op.
enum class Broadcast { none, left_scalar, right_scalar };

Broadcast broadcast_of(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return Broadcast::none;
  if (a.size() == 1) return Broadcast::left_scalar;
  if (b.size() == 1) return Broadcast::right_scalar;
  throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " + to_string(b));
}

// Applies fn(a_i, b_i) under the broadcast rule.
template <typename T, typename Fn>
Tensor<T> zip(const Tensor<T>& a, const Tensor<T>& b, Broadcast bc, Fn fn) {
  const Shape shape = bc == Broadcast::left_scalar ? b.shape() : a.shape();
  Tensor<T> out(shape);
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) {
    const T av = bc == Broadcast::left_scalar ? a[0] : a[i];
    const T bv = bc == Broadcast::right_scalar ? b[0] : b[i];
    out[i] = fn(av, bv);
  }
  return out;
}

// Accumulates per-element contributions into a parent's grad, reducing when
// that parent was broadcast.
template <typename T>
void accumulate(Node<T>& parent, bool reduced, std::size_t n, auto&& contribution) {
  if (!parent.requires_grad) return;
  Tensor<T>& g = parent.grad_buffer();
  if (reduced) {
    T total = 0;
    for (std::size_t i = 0; i < n; ++i) total += contribution(i);
    g[0] += total;
  } else {
    for (std::size_t i = 0; i < n; ++i) g[i] += contribution(i);
  }
}

template <typename T>
void im2col(const T* img, std::size_t channels, const ConvGeometry& g, T* cols) {
  const std::size_t plane = g.out_h * g.out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    const T* src = img + c * g.in_h * g.in_w;
    for (std::size_t a = 0; a < g.kh; ++a) {
      for (std::size_t b = 0; b < g.kw; ++b) {
        T* row = cols + ((c * g.kh + a) * g.kw + b) * plane;
        for (std::size_t oi = 0; oi < g.out_h; ++oi) {
          const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(oi * g.stride + a) -
                                    static_cast<std::ptrdiff_t>(g.pad_top);
          T* dst = row + oi * g.out_w;
          if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(g.in_h)) {
            std::fill(dst, dst + g.out_w, T{0});
            continue;
          }
          const T* line = src + static_cast<std::size_t>(ii) * g.in_w;
          for (std::size_t oj = 0; oj < g.out_w; ++oj) {
            const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(oj * g.stride + b) -
                                      static_cast<std::ptrdiff_t>(g.pad_left);
            dst[oj] = (jj < 0 || jj >= static_cast<std::ptrdiff_t>(g.in_w)) ? T{0} : line[jj];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters (adds) columns back onto the image.
template <typename T>
void col2im(const T* cols, std::size_t channels, const ConvGeometry& g, T* img) {
  const std::size_t plane = g.out_h * g.out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    T* dst = img + c * g.in_h * g.in_w;
    for (std::size_t a = 0; a < g.kh; ++a) {
      for (std::size_t b = 0; b < g.kw; ++b) {
        const T* row = cols + ((c * g.kh + a) * g.kw + b) * plane;
        for (std::size_t oi = 0; oi < g.out_h; ++oi) {
          const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(oi * g.stride + a) -
                                    static_cast<std::ptrdiff_t>(g.pad_top);
          if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
          T* line = dst + static_cast<std::size_t>(ii) * g.in_w;
          const T* src = row + oi * g.out_w;
          for (std::size_t oj = 0; oj < g.out_w; ++oj) {
            const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(oj * g.stride + b) -
                                      static_cast<std::ptrdiff_t>(g.pad_left);
            if (jj >= 0 && jj < static_cast<std::ptrdiff_t>(g.in_w)) line[jj] += src[oj];
          }
        }
      }
    }
  }
}

bool is_pointwise(const ConvGeometry& g) {
  return g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad_top == 0 && g.pad_left == 0;
}

}  // namespace

ConvGeometry conv_geometry(std::size_t in_h, std::size_t in_w, std::size_t kh, std::size_t kw,
                           const ConvSpec& spec) {
  if (kh == 0 || kw == 0) throw ShapeError("conv kernel must be at least 1x1");
  if (spec.stride == 0) throw ShapeError("conv stride must be positive");
  ConvGeometry g{in_h, in_w, kh, kw, spec.stride, 0, 0, 0, 0};
  const std::size_t s = spec.stride;
  if (spec.padding == Padding::valid) {
    if (kh > in_h || kw > in_w) {
      throw ShapeError("conv kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                       " larger than input " + std::to_string(in_h) + "x" + std::to_string(in_w));
    }
    g.out_h = (in_h - kh) / s + 1;
    g.out_w = (in_w - kw) / s + 1;
    return g;
  }
  if (in_h == 0 || in_w == 0) throw ShapeError("conv input has empty spatial extent");
  g.out_h = (in_h + s - 1) / s;
  g.out_w = (in_w + s - 1) / s;
  const auto pad_total = [s](std::size_t in, std::size_t out, std::size_t k) -> std::size_t {
    const std::size_t need = (out - 1) * s + k;
    return need > in ? need - in : 0;
  };
  const std::size_t ph = pad_total(in_h, g.out_h, kh);
  const std::size_t pw = pad_total(in_w, g.out_w, kw);
  if (kh > in_h + ph || kw > in_w + pw) throw ShapeError("conv kernel larger than padded input");
  g.pad_top = ph / 2;
  g.pad_left = pw / 2;
  return g;
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  const Broadcast bc = broadcast_of(a.shape(), b.shape(), "add");
  Tensor<T> out = zip(a.value(), b.value(), bc, [](T x, T y) { return x + y; });
  return Var<T>::make(std::move(out), {a, b}, [bc](Node<T>& self) {
    const Tensor<T>& g = self.grad;
    const std::size_t n = g.size();
    accumulate(self.parent(0), bc == Broadcast::left_scalar, n, [&](std::size_t i) { return g[i]; });
    accumulate(self.parent(1), bc == Broadcast::right_scalar, n, [&](std::size_t i) { return g[i]; });
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  const Broadcast bc = broadcast_of(a.shape(), b.shape(), "sub");
  Tensor<T> out = zip(a.value(), b.value(), bc, [](T x, T y) { return x - y; });
  return Var<T>::make(std::move(out), {a, b}, [bc](Node<T>& self) {
    const Tensor<T>& g = self.grad;
    const std::size_t n = g.size();
    accumulate(self.parent(0), bc == Broadcast::left_scalar, n, [&](std::size_t i) { return g[i]; });
    accumulate(self.parent(1), bc == Broadcast::right_scalar, n, [&](std::size_t i) { return -g[i]; });
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  const Broadcast bc = broadcast_of(a.shape(), b.shape(), "mul");
  Tensor<T> out = zip(a.value(), b.value(), bc, [](T x, T y) { return x * y; });
  return Var<T>::make(std::move(out), {a, b}, [bc](Node<T>& self) {
    const Tensor<T>& g = self.grad;
    const Tensor<T>& av = self.parent(0).value;
    const Tensor<T>& bv = self.parent(1).value;
    const bool ls = bc == Broadcast::left_scalar, rs = bc == Broadcast::right_scalar;
    const std::size_t n = g.size();
    accumulate(self.parent(0), ls, n, [&](std::size_t i) { return g[i] * bv[rs ? 0 : i]; });
    accumulate(self.parent(1), rs, n, [&](std::size_t i) { return g[i] * av[ls ? 0 : i]; });
  });
}

template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  const Broadcast bc = broadcast_of(a.shape(), b.shape(), "div");
  Tensor<T> out = zip(a.value(), b.value(), bc, [](T x, T y) { return x / y; });
  return Var<T>::make(std::move(out), {a, b}, [bc](Node<T>& self) {
    const Tensor<T>& g = self.grad;
    const Tensor<T>& av = self.parent(0).value;
    const Tensor<T>& bv = self.parent(1).value;
    const bool ls = bc == Broadcast::left_scalar, rs = bc == Broadcast::right_scalar;
    const std::size_t n = g.size();
    accumulate(self.parent(0), ls, n, [&](std::size_t i) { return g[i] / bv[rs ? 0 : i]; });
    accumulate(self.parent(1), rs, n, [&](std::size_t i) {
      const T d = bv[rs ? 0 : i];
      return -g[i] * av[ls ? 0 : i] / (d * d);
    });
  });
}

template <typename T>
Var<T> affine(const Var<T>& a, T scale, T shift) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale * a.value()[i] + shift;
  return Var<T>::make(std::move(out), {a}, [scale](Node<T>& self) {
    Tensor<T>& ga = self.parent(0).grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += scale * self.grad[i];
  });
}

template <typename T>
Var<T> log(const Var<T>& a) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(a.value()[i]);
  return Var<T>::make(std::move(out), {a}, [](Node<T>& self) {
    Node<T>& p = self.parent(0);
    Tensor<T>& ga = p.grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] / p.value[i];
  });
}

template <typename T>
Var<T> pow(const Var<T>& a, T p) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::pow(a.value()[i], p);
  return Var<T>::make(std::move(out), {a}, [p](Node<T>& self) {
    Node<T>& src = self.parent(0);
    Tensor<T>& ga = src.grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) {
      ga[i] += self.grad[i] * p * std::pow(src.value[i], p - T{1});
    }
  });
}

template <typename T>
Var<T> clamp(const Var<T>& a, T lo, T hi) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(a.value()[i], lo, hi);
  return Var<T>::make(std::move(out), {a}, [lo, hi](Node<T>& self) {
    Node<T>& src = self.parent(0);
    Tensor<T>& ga = src.grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) {
      const T v = src.value[i];
      if (v >= lo && v <= hi) ga[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  T total = 0;
  for (T v : a.value().values()) total += v;
  return Var<T>::make(Tensor<T>::scalar(total), {a}, [](Node<T>& self) {
    Tensor<T>& ga = self.parent(0).grad_buffer();
    const T g = self.grad[0];
    for (T& v : ga.values()) v += g;
  });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  const T n = static_cast<T>(a.value().size());
  return affine(sum(a), T{1} / n, T{0});
}

template <typename T>
Var<T> activation(const Var<T>& x, Activation kind) {
  Tensor<T> out(x.shape());
  const Tensor<T>& in = x.value();
  switch (kind) {
    case Activation::relu:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] > T{0} ? in[i] : T{0};
      break;
    case Activation::sigmoid: {
      constexpr T lo = std::numeric_limits<T>::min();
      constexpr T hi = T{1} - std::numeric_limits<T>::epsilon() / T{2};
      for (std::size_t i = 0; i < out.size(); ++i) {
        const T v = in[i];
        T s;
        if (v >= T{0}) {
          s = T{1} / (T{1} + std::exp(-v));
        } else {
          const T e = std::exp(v);
          s = e / (T{1} + e);
        }
        out[i] = std::clamp(s, lo, hi);
      }
      break;
    }
    case Activation::tanh:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(in[i]);
      break;
  }
  return Var<T>::make(std::move(out), {x}, [kind](Node<T>& self) {
    Node<T>& src = self.parent(0);
    Tensor<T>& gx = src.grad_buffer();
    const Tensor<T>& y = self.value;
    const Tensor<T>& g = self.grad;
    switch (kind) {
      case Activation::relu:
        for (std::size_t i = 0; i < gx.size(); ++i) {
          if (src.value[i] > T{0}) gx[i] += g[i];
        }
        break;
      case Activation::sigmoid:
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * y[i] * (T{1} - y[i]);
        break;
      case Activation::tanh:
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * (T{1} - y[i] * y[i]);
        break;
    }
  });
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& kernel, const ConvSpec& spec) {
  const Shape xs = x.shape();
  const Shape ks = kernel.shape();
  if (xs.c != ks.c) {
    throw ShapeError("conv2d: input has " + std::to_string(xs.c) + " channels, kernel expects " +
                     std::to_string(ks.c));
  }
  const ConvGeometry g = conv_geometry(xs.h, xs.w, ks.h, ks.w, spec);
  const std::size_t cout = ks.n;
  const std::size_t depth = ks.c * ks.h * ks.w;
  const std::size_t plane = g.out_h * g.out_w;
  const bool pointwise = is_pointwise(g);

  Tensor<T> out(Shape{xs.n, cout, g.out_h, g.out_w});
  ConstMatMap<T> w(kernel.value().data(), cout, depth);
  std::vector<T> cols(pointwise ? 0 : depth * plane);
  for (std::size_t n = 0; n < xs.n; ++n) {
    const T* src = x.value().image(n).data();
    if (!pointwise) {
      im2col(src, xs.c, g, cols.data());
      src = cols.data();
    }
    MatMap<T> y(out.image(n).data(), cout, plane);
    y.noalias() = w * ConstMatMap<T>(src, depth, plane);
  }

  return Var<T>::make(std::move(out), {x, kernel}, [g, cout, depth, plane, pointwise](Node<T>& self) {
    Node<T>& xn = self.parent(0);
    Node<T>& kn = self.parent(1);
    const Shape xs = xn.value.shape();
    ConstMatMap<T> w(kn.value.data(), cout, depth);
    std::vector<T> cols(depth * plane);
    for (std::size_t n = 0; n < xs.n; ++n) {
      ConstMatMap<T> gy(self.grad.image(n).data(), cout, plane);
      if (kn.requires_grad) {
        const T* src = xn.value.image(n).data();
        if (!pointwise) {
          im2col(src, xs.c, g, cols.data());
          src = cols.data();
        }
        MatMap<T> gw(kn.grad_buffer().data(), cout, depth);
        gw.noalias() += gy * ConstMatMap<T>(src, depth, plane).transpose();
      }
      if (xn.requires_grad) {
        T* gx = xn.grad_buffer().image(n).data();
        if (pointwise) {
          MatMap<T>(gx, depth, plane).noalias() += w.transpose() * gy;
        } else {
          MatMap<T> gc(cols.data(), depth, plane);
          gc.noalias() = w.transpose() * gy;
          col2im(cols.data(), xs.c, g, gx);
        }
      }
    }
  });
}

template <typename T>
Var<T> conv2d_transpose(const Var<T>& x, const Var<T>& kernel, const ConvSpec& spec) {
  const Shape xs = x.shape();
  const Shape ks = kernel.shape();
  if (xs.c != ks.c) {
    throw ShapeError("conv2d_transpose: input has " + std::to_string(xs.c) +
                     " channels, kernel expects " + std::to_string(ks.c));
  }
  if (spec.stride == 0) throw ShapeError("conv stride must be positive");
  const std::size_t s = spec.stride;
  const std::size_t out_h = spec.padding == Padding::same ? xs.h * s : (xs.h - 1) * s + ks.h;
  const std::size_t out_w = spec.padding == Padding::same ? xs.w * s : (xs.w - 1) * s + ks.w;
  const ConvGeometry g = conv_geometry(out_h, out_w, ks.h, ks.w, spec);
  if (g.out_h != xs.h || g.out_w != xs.w) throw ShapeError("conv2d_transpose: inconsistent geometry");

  const std::size_t cout = ks.n, cin = ks.c, taps = ks.h * ks.w;
  const std::size_t rows = cout * taps;
  const std::size_t plane = xs.h * xs.w;

  // Kernel rearranged to (cout*kh*kw) x cin.
  auto rearrange = [cout, cin, taps](const Tensor<T>& k) {
    RowMat<T> r(cout * taps, cin);
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t i = 0; i < cin; ++i)
        for (std::size_t t = 0; t < taps; ++t) r(o * taps + t, i) = k[(o * cin + i) * taps + t];
    return r;
  };

  Tensor<T> out(Shape{xs.n, cout, out_h, out_w});
  const RowMat<T> wr = rearrange(kernel.value());
  RowMat<T> cols(rows, plane);
  for (std::size_t n = 0; n < xs.n; ++n) {
    cols.noalias() = wr * ConstMatMap<T>(x.value().image(n).data(), cin, plane);
    col2im(cols.data(), cout, g, out.image(n).data());
  }

  return Var<T>::make(std::move(out), {x, kernel},
                      [g, cout, cin, taps, rows, plane, rearrange](Node<T>& self) {
                        Node<T>& xn = self.parent(0);
                        Node<T>& kn = self.parent(1);
                        const std::size_t batch = xn.value.shape().n;
                        const RowMat<T> wr = rearrange(kn.value);
                        RowMat<T> cols(rows, plane);
                        RowMat<T> gwr = RowMat<T>::Zero(rows, cin);
                        for (std::size_t n = 0; n < batch; ++n) {
                          im2col(self.grad.image(n).data(), cout, g, cols.data());
                          if (xn.requires_grad) {
                            MatMap<T>(xn.grad_buffer().image(n).data(), cin, plane).noalias() +=
                                wr.transpose() * cols;
                          }
                          if (kn.requires_grad) {
                            gwr.noalias() +=
                                cols * ConstMatMap<T>(xn.value.image(n).data(), cin, plane).transpose();
                          }
                        }
                        if (kn.requires_grad) {
                          Tensor<T>& gk = kn.grad_buffer();
                          for (std::size_t o = 0; o < cout; ++o)
                            for (std::size_t i = 0; i < cin; ++i)
                              for (std::size_t t = 0; t < taps; ++t)
                                gk[(o * cin + i) * taps + t] += gwr(o * taps + t, i);
                        }
                      });
}

template <typename T>
Var<T> add_channel_bias(const Var<T>& x, const Var<T>& bias) {
  const Shape xs = x.shape();
  if (bias.shape() != Shape{1, xs.c, 1, 1}) {
    throw ShapeError("add_channel_bias: bias " + to_string(bias.shape()) + " for input " + to_string(xs));
  }
  Tensor<T> out = x.value();
  for (std::size_t n = 0; n < xs.n; ++n)
    for (std::size_t c = 0; c < xs.c; ++c) {
      const T b = bias.value()[c];
      T* p = out.data() + (n * xs.c + c) * xs.plane();
      for (std::size_t i = 0; i < xs.plane(); ++i) p[i] += b;
    }
  return Var<T>::make(std::move(out), {x, bias}, [](Node<T>& self) {
    const Shape xs = self.value.shape();
    const Tensor<T>& g = self.grad;
    if (self.parent(0).requires_grad) {
      Tensor<T>& gx = self.parent(0).grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (self.parent(1).requires_grad) {
      Tensor<T>& gb = self.parent(1).grad_buffer();
      for (std::size_t n = 0; n < xs.n; ++n)
        for (std::size_t c = 0; c < xs.c; ++c) {
          const T* p = g.data() + (n * xs.c + c) * xs.plane();
          T acc = 0;
          for (std::size_t i = 0; i < xs.plane(); ++i) acc += p[i];
          gb[c] += acc;
        }
    }
  });
}

template <typename T>
Var<T> maxpool2d(const Var<T>& x) {
  const Shape xs = x.shape();
  if (xs.h % 2 != 0 || xs.w % 2 != 0) {
    throw ShapeError("maxpool2d: spatial dims must be even, got " + to_string(xs));
  }
  const Shape os{xs.n, xs.c, xs.h / 2, xs.w / 2};
  Tensor<T> out(os);
  std::vector<std::size_t> argmax(os.size());
  const Tensor<T>& in = x.value();
  std::size_t o = 0;
  for (std::size_t nc = 0; nc < xs.n * xs.c; ++nc) {
    const std::size_t base = nc * xs.plane();
    for (std::size_t i = 0; i < os.h; ++i) {
      for (std::size_t j = 0; j < os.w; ++j, ++o) {
        const std::size_t top = base + 2 * i * xs.w + 2 * j;
        const std::size_t window[4] = {top, top + 1, top + xs.w, top + xs.w + 1};
        std::size_t best = window[0];
        for (std::size_t k = 1; k < 4; ++k) {
          if (in[window[k]] > in[best]) best = window[k];
        }
        out[o] = in[best];
        argmax[o] = best;
      }
    }
  }
  return Var<T>::make(std::move(out), {x}, [argmax = std::move(argmax)](Node<T>& self) {
    Tensor<T>& gx = self.parent(0).grad_buffer();
    for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += self.grad[i];
  });
}

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  const Shape as = a.shape(), bs = b.shape();
  if (as.n != bs.n || as.h != bs.h || as.w != bs.w) {
    throw ShapeError("concat_channels: " + to_string(as) + " vs " + to_string(bs));
  }
  Tensor<T> out(Shape{as.n, as.c + bs.c, as.h, as.w});
  for (std::size_t n = 0; n < as.n; ++n) {
    auto dst = out.image(n);
    auto ai = a.value().image(n), bi = b.value().image(n);
    std::copy(ai.begin(), ai.end(), dst.begin());
    std::copy(bi.begin(), bi.end(), dst.begin() + static_cast<std::ptrdiff_t>(ai.size()));
  }
  return Var<T>::make(std::move(out), {a, b}, [](Node<T>& self) {
    Node<T>& an = self.parent(0);
    Node<T>& bn = self.parent(1);
    const std::size_t na = an.value.shape().image();
    for (std::size_t n = 0; n < self.value.shape().n; ++n) {
      auto g = self.grad.image(n);
      if (an.requires_grad) {
        auto ga = an.grad_buffer().image(n);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
      }
      if (bn.requires_grad) {
        auto gb = bn.grad_buffer().image(n);
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[na + i];
      }
    }
  });
}

template <typename T>
Var<T> scale_by_map(const Var<T>& x, const Var<T>& map) {
  const Shape xs = x.shape();
  if (map.shape() != Shape{xs.n, 1, xs.h, xs.w}) {
    throw ShapeError("scale_by_map: map " + to_string(map.shape()) + " for input " + to_string(xs));
  }
  Tensor<T> out(xs);
  const std::size_t plane = xs.plane();
  for (std::size_t n = 0; n < xs.n; ++n)
    for (std::size_t c = 0; c < xs.c; ++c) {
      const T* m = map.value().data() + n * plane;
      const T* src = x.value().data() + (n * xs.c + c) * plane;
      T* dst = out.data() + (n * xs.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] * m[i];
    }
  return Var<T>::make(std::move(out), {x, map}, [](Node<T>& self) {
    Node<T>& xn = self.parent(0);
    Node<T>& mn = self.parent(1);
    const Shape xs = xn.value.shape();
    const std::size_t plane = xs.plane();
    for (std::size_t n = 0; n < xs.n; ++n)
      for (std::size_t c = 0; c < xs.c; ++c) {
        const std::size_t off = (n * xs.c + c) * plane;
        const T* g = self.grad.data() + off;
        if (xn.requires_grad) {
          T* gx = xn.grad_buffer().data() + off;
          const T* m = mn.value.data() + n * plane;
          for (std::size_t i = 0; i < plane; ++i) gx[i] += g[i] * m[i];
        }
        if (mn.requires_grad) {
          T* gm = mn.grad_buffer().data() + n * plane;
          const T* xv = xn.value.data() + off;
          for (std::size_t i = 0; i < plane; ++i) gm[i] += g[i] * xv[i];
        }
      }
  });
}

#define R2AU_INSTANTIATE_OPS(T)                                                          \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                  \
  template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                  \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                  \
  template Var<T> div<T>(const Var<T>&, const Var<T>&);                                  \
  template Var<T> affine<T>(const Var<T>&, T, T);                                        \
  template Var<T> log<T>(const Var<T>&);                                                 \
  template Var<T> pow<T>(const Var<T>&, T);                                              \
  template Var<T> clamp<T>(const Var<T>&, T, T);                                         \
  template Var<T> sum<T>(const Var<T>&);                                                 \
  template Var<T> mean<T>(const Var<T>&);                                                \
  template Var<T> activation<T>(const Var<T>&, Activation);                              \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const ConvSpec&);              \
  template Var<T> conv2d_transpose<T>(const Var<T>&, const Var<T>&, const ConvSpec&);    \
  template Var<T> add_channel_bias<T>(const Var<T>&, const Var<T>&);                     \
  template Var<T> maxpool2d<T>(const Var<T>&);                                           \
  template Var<T> concat_channels<T>(const Var<T>&, const Var<T>&);                      \
  template Var<T> scale_by_map<T>(const Var<T>&, const Var<T>&);

R2AU_INSTANTIATE_OPS(float)
R2AU_INSTANTIATE_OPS(double)

}  // namespace r2au
