#include "r2au/verification.hpp"

#include <algorithm>
#include <random>

#include "r2au/losses.hpp"
#include "r2au/model.hpp"

namespace r2au {

namespace {

using V = Var<double>;
using TD = Tensor<double>;

TD uniform(Shape s, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(lo, hi);
  TD t(s);
  for (double& v : t.values()) v = d(rng);
  return t;
}

V leaf(Shape s, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0) { return V(uniform(s, lo, hi, rng), true); }

// Binary target with both classes present.
TD binary_target(Shape s, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.4);
  TD t(s);
  for (double& v : t.values()) v = coin(rng) ? 1.0 : 0.0;
  t[0] = 1.0;
  t[1] = 0.0;
  return t;
}

class Suite {
 public:
  Suite(const SuiteOptions& o, const std::function<void(const CheckResult&)>& cb) : opt_(o), cb_(cb) {}

  // Records sum(r * build()) for fresh random r of the output's shape.
  void projected(const std::string& name, std::uint64_t seed, const std::vector<V>& inputs,
                 const std::function<V()>& build, double tol = 0, std::size_t coords = 0) {
    std::mt19937_64 rng(seed ^ 0x5eedULL);
    TD r;
    {
      NoGradGuard g;
      r = uniform(build().shape(), -1.0, 1.0, rng);
    }
    scalar(name, seed, inputs, [&] { return sum(mul(build(), constant(r))); }, tol, coords);
  }

  void scalar(const std::string& name, std::uint64_t seed, const std::vector<V>& inputs,
              const std::function<V()>& f, double tol = 0, std::size_t coords = 0) {
    const double t = tol > 0 ? tol : opt_.tolerance;
    const GradCheckReport rep = grad_check(f, inputs, opt_.step, coords, seed, true, t / 10.0);
    CheckResult& res = slot(name, t);
    res.skipped += rep.skipped;
    if (rep.max_relative_error >= res.max_error) {
      res.max_error = rep.max_relative_error;
      res.worst_analytic = rep.worst_analytic;
      res.worst_numeric = rep.worst_numeric;
    }
    res.coordinates += rep.coordinates;
  }

  std::vector<CheckResult> finish() {
    if (cb_)
      for (const auto& r : results_) cb_(r);
    return results_;
  }

 private:
  CheckResult& slot(const std::string& name, double tol) {
    for (auto& r : results_)
      if (r.name == name) return r;
    results_.push_back({name, 0.0, tol, 0, 0, 0.0, 0.0});
    return results_.back();
  }

  SuiteOptions opt_;
  std::function<void(const CheckResult&)> cb_;
  std::vector<CheckResult> results_;
};

void op_checks(Suite& suite, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  {
    V x = leaf({2, 3, 6, 6}, rng), k = leaf({4, 3, 3, 3}, rng, -1, 1);
    suite.projected("conv2d same", seed, {x, k}, [&] { return conv2d(x, k); });
  }
  {
    V x = leaf({1, 2, 7, 7}, rng), k = leaf({3, 2, 3, 3}, rng, -1, 1);
    suite.projected("conv2d stride2 valid", seed, {x, k}, [&] { return conv2d(x, k, {2, Padding::valid}); });
  }
  {
    V x = leaf({2, 3, 4, 4}, rng), k = leaf({2, 3, 2, 2}, rng, -1, 1);
    suite.projected("conv2d_transpose 2x2 stride2", seed, {x, k}, [&] { return conv2d_transpose(x, k); });
  }
  {
    V x = leaf({1, 2, 5, 5}, rng), k = leaf({3, 2, 3, 3}, rng, -1, 1);
    suite.projected("conv2d_transpose 3x3 stride2 same", seed, {x, k},
                    [&] { return conv2d_transpose(x, k, {2, Padding::same}); });
  }
  {
    V x = leaf({2, 2, 6, 6}, rng);
    suite.projected("maxpool2d", seed, {x}, [&] { return maxpool2d(x); });
  }
  for (auto [kind, name] : {std::pair{Activation::relu, "relu"}, std::pair{Activation::sigmoid, "sigmoid"},
                            std::pair{Activation::tanh, "tanh"}}) {
    V x = leaf({2, 2, 3, 3}, rng);
    suite.projected(name, seed, {x}, [&, kind = kind] { return activation(x, kind); });
  }
  {
    V a = leaf({1, 2, 3, 3}, rng), b = leaf({1, 2, 3, 3}, rng), c = leaf({1, 2, 3, 3}, rng, 0.5, 2.0);
    suite.projected("elementwise arithmetic", seed, {a, b, c}, [&] {
      return add(sub(mul(a, b), div(a, c)), add(log(c), pow(c, 1.7)));
    });
  }
  {
    V x = leaf({2, 3, 3, 3}, rng), b = leaf({1, 3, 1, 1}, rng), y = leaf({2, 2, 3, 3}, rng),
      m = leaf({2, 1, 3, 3}, rng);
    suite.projected("bias concat scale_by_map", seed, {x, b, y, m},
                    [&] { return scale_by_map(concat_channels(add_channel_bias(x, b), y), m); });
  }
  {
    V x = leaf({3, 2, 3, 3}, rng);
    auto bn = BatchNormParams<double>::make(2);
    bn.scale.mutable_value() = uniform({1, 2, 1, 1}, 0.5, 1.5, rng);
    bn.shift.mutable_value() = uniform({1, 2, 1, 1}, -0.5, 0.5, rng);
    suite.projected("batch_norm train", seed, {x, bn.scale, bn.shift},
                    [&] { return batch_norm(x, bn, Mode::train); });
    bn.running[0].var = uniform({1, 2, 1, 1}, 0.5, 2.0, rng);
    suite.projected("batch_norm eval", seed, {x, bn.scale, bn.shift}, [&] { return batch_norm(x, bn, Mode::eval); });
  }
}

void block_checks(Suite& suite, std::uint64_t seed) {
  std::mt19937_64 rng(seed + 1000);
  for (std::size_t steps : {std::size_t{2}, std::size_t{3}}) {
    V x = leaf({2, 2, 6, 6}, rng);
    auto u = RecurrentConvUnit<double>::make(2, 3, 3, steps, rng);
    suite.projected("recurrent_conv T=" + std::to_string(steps), seed,
                    {x, u.theta_g, u.theta_r, u.bias, u.bn.scale, u.bn.shift},
                    [&] { return recurrent_conv_forward(x, u, Mode::train); });
  }
  {
    V x = leaf({2, 3, 4, 4}, rng);
    auto u = RecurrentConvUnit<double>::make(3, 3, 3, 2, rng);
    suite.projected("recurrent_residual identity skip", seed,
                    {x, u.theta_g, u.theta_r, u.bias, u.bn.scale, u.bn.shift},
                    [&] { return recurrent_residual_forward(x, u, std::optional<V>{}, Mode::train); });
  }
  {
    V x = leaf({2, 2, 4, 4}, rng);
    auto u = RecurrentConvUnit<double>::make(2, 3, 3, 2, rng);
    std::optional<V> proj = leaf({3, 2, 1, 1}, rng, -1, 1);
    suite.projected("recurrent_residual projection skip", seed,
                    {x, *proj, u.theta_g, u.theta_r, u.bias, u.bn.scale, u.bn.shift},
                    [&] { return recurrent_residual_forward(x, u, proj, Mode::train); });
  }
  {
    V h = leaf({2, 4, 4, 4}, rng), s = leaf({2, 3, 4, 4}, rng);
    auto g = AttentionGateParams<double>::make(4, 3, 2, rng);
    // Moderate weights keep tanh and the sigmoid away from saturation, where
    // gradients shrink below what differencing can resolve.
    g.w_att.mutable_value() = uniform(g.w_att.shape(), -0.5, 0.5, rng);
    g.u_att.mutable_value() = uniform(g.u_att.shape(), -0.5, 0.5, rng);
    g.psi.mutable_value() = uniform(g.psi.shape(), -1.0, 1.0, rng);
    g.b_g.mutable_value() = uniform(g.b_g.shape(), -0.5, 0.5, rng);
    g.b_psi.mutable_value() = uniform(g.b_psi.shape(), -0.5, 0.5, rng);
    std::mt19937_64 rrng(seed ^ 0xa77eULL);
    const TD ra = uniform({2, 1, 4, 4}, -1, 1, rrng);
    const TD rg = uniform({2, 4, 4, 4}, -1, 1, rrng);
    suite.scalar("attention_gate", seed, {h, s, g.w_att, g.u_att, g.psi, g.b_g, g.b_psi}, [&] {
      const auto out = attention_gate(h, s, g);
      return add(sum(mul(out.gated, constant(rg))), sum(mul(out.alpha, constant(ra))));
    });
  }
}

void loss_checks(Suite& suite, std::uint64_t seed) {
  std::mt19937_64 rng(seed + 2000);
  const Shape s{2, 1, 4, 4};
  V p = leaf(s, rng, 0.05, 0.95);
  const TD g = binary_target(s, rng);
  suite.scalar("loss wbce", seed, {p}, [&] { return wbce(p, g, 0.7); });
  suite.scalar("loss bce", seed, {p}, [&] { return bce(p, g); });
  suite.scalar("loss dice_loss2", seed, {p}, [&] { return dice_loss2(p, g, 1e-6); });
  suite.scalar("loss tversky", seed, {p}, [&] { return 1.0 - tversky_index(p, g, 0.3, 0.7, 1e-6); });
  suite.scalar("loss focal_tversky", seed, {p}, [&] { return focal_tversky(p, g, 0.3, 0.7, 0.75, 1e-6); });
  suite.scalar("loss bce_dice", seed, {p}, [&] { return bce_dice(p, g, 1e-6, 1e-7); });
}

void model_check(Suite& suite, std::uint64_t seed, const SuiteOptions& o) {
  ModelConfig cfg;
  cfg.depth = o.depth;
  cfg.base_channels = o.base_channels;
  cfg.height = cfg.width = o.size;
  auto model = R2AUNet<double>::build(cfg, seed);
  std::mt19937_64 rng(seed + 3000);
  const Shape s{2, 1, o.size, o.size};
  V x = leaf(s, rng, 0.0, 1.0);
  const TD g = binary_target(s, rng);
  std::vector<V> inputs{x};
  for (const auto& [name, p] : model.registry().params) inputs.push_back(p);
  suite.scalar("model end-to-end", seed, inputs,
               [&] { return focal_tversky(model.forward(x, Mode::train), g, 0.3, 0.7, 0.75, 1e-6); },
               o.model_tolerance, o.model_coords_per_tensor);
}

}  // namespace

std::vector<CheckResult> run_gradient_suite(const SuiteOptions& options,
                                            const std::function<void(const CheckResult&)>& on_result) {
  if (options.seeds == 0) throw ArgumentError("run_gradient_suite: need at least one seed");
  Suite suite(options, on_result);
  for (std::size_t k = 0; k < options.seeds; ++k) {
    const std::uint64_t seed = options.first_seed + k;
    op_checks(suite, seed);
    block_checks(suite, seed);
    loss_checks(suite, seed);
    model_check(suite, seed, options);
  }
  return suite.finish();
}

}  // namespace r2au
