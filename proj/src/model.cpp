#include "r2au/model.hpp"

namespace r2au {

void ModelConfig::validate() const {
  if (depth < 1) throw ArgumentError("model.depth must be >= 1");
  if (depth > 16) throw ArgumentError("model.depth must be <= 16");
  if (base_channels < 1) throw ArgumentError("model.base_channels must be >= 1");
  if (timesteps < 1) throw ArgumentError("model.timesteps must be >= 1");
  if (kernel < 1) throw ArgumentError("model.kernel must be >= 1");
  if (input_channels < 1) throw ArgumentError("model.input_channels must be >= 1");
  const std::size_t factor = std::size_t{1} << depth;
  if (height == 0 || width == 0 || height % factor != 0 || width % factor != 0) {
    throw ArgumentError("model input " + std::to_string(height) + "x" + std::to_string(width) +
                        " must be divisible by 2^depth = " + std::to_string(factor));
  }
}

std::string ModelConfig::variant_name() const {
  std::string name = use_residual ? "recurrent_residual" : "recurrent";
  if (use_attention) name += "_attention";
  return name + "_unet";
}

template <typename T>
R2AUNet<T> R2AUNet<T>::build(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  R2AUNet net;
  net.config_ = config;

  auto make_block = [&](std::size_t in, std::size_t out) {
    Block b{RecurrentConvUnit<T>::make(in, out, config.kernel, config.timesteps, rng, config.init), std::nullopt};
    if (config.use_residual && in != out) {
      b.projection = Var<T>(he_init<T>(Shape{out, in, 1, 1}, in, rng, config.init), true);
    }
    return b;
  };

  std::size_t channels = config.input_channels;
  for (std::size_t k = 0; k < config.depth; ++k) {
    net.encoder_.push_back(make_block(channels, config.stage_channels(k)));
    channels = config.stage_channels(k);
  }
  net.bottleneck_ = make_block(channels, config.stage_channels(config.depth));

  for (std::size_t level = config.depth; level-- > 0;) {
    const std::size_t below = config.stage_channels(level + 1);
    const std::size_t here = config.stage_channels(level);
    DecoderStage stage;
    stage.up_kernel = Var<T>(he_init<T>(Shape{here, below, 2, 2}, below * 4, rng, config.init), true);
    stage.up_bias = Var<T>(Tensor<T>(Shape{1, here, 1, 1}), true);
    if (config.use_attention && (level > 0 || config.attend_first_skip)) {
      stage.gate = AttentionGateParams<T>::make(here, here, std::max<std::size_t>(1, here / 2), rng, config.init);
    }
    stage.block = make_block(2 * here, here);
    net.decoder_.push_back(std::move(stage));
  }

  net.head_kernel_ = Var<T>(he_init<T>(Shape{1, config.base_channels, 1, 1}, config.base_channels, rng, config.init), true);
  net.head_bias_ = Var<T>(Tensor<T>(Shape{1, 1, 1, 1}), true);
  return net;
}

template <typename T>
bool R2AUNet<T>::has_gate(std::size_t level) const {
  if (level >= config_.depth) return false;
  return decoder_[config_.depth - 1 - level].gate.has_value();
}

template <typename T>
Var<T> R2AUNet<T>::run_block(Block& b, const Var<T>& x, Mode mode) {
  if (config_.use_residual) return recurrent_residual_forward(x, b.unit, b.projection, mode);
  return recurrent_conv_forward(x, b.unit, mode);
}

template <typename T>
Var<T> R2AUNet<T>::forward(const Var<T>& x, Mode mode) {
  const Shape xs = x.shape();
  if (xs.c != config_.input_channels || xs.h != config_.height || xs.w != config_.width) {
    throw ShapeError("model expects (n," + std::to_string(config_.input_channels) + "," +
                     std::to_string(config_.height) + "," + std::to_string(config_.width) + "), got " +
                     to_string(xs));
  }
  last_alpha_.clear();
  std::vector<Var<T>> skips;
  Var<T> h = x;
  for (auto& stage : encoder_) {
    h = run_block(stage, h, mode);
    skips.push_back(h);
    h = maxpool2d(h);
  }
  h = run_block(bottleneck_, h, mode);

  for (std::size_t i = 0; i < decoder_.size(); ++i) {
    DecoderStage& stage = decoder_[i];
    const std::size_t level = config_.depth - 1 - i;
    const Var<T> up = add_channel_bias(conv2d_transpose(h, stage.up_kernel, ConvSpec{2, Padding::valid}),
                                       stage.up_bias);
    Var<T> skip = skips[level];
    if (stage.gate) {
      GateOutput<T> g = attention_gate(skip, up, *stage.gate);
      last_alpha_.emplace_back(level, g.alpha.value());
      skip = g.gated;
    }
    h = run_block(stage.block, concat_channels(skip, up), mode);
  }
  return sigmoid(add_channel_bias(conv2d(h, head_kernel_, ConvSpec{1, Padding::same}), head_bias_));
}

template <typename T>
Tensor<T> R2AUNet<T>::predict(const Tensor<T>& x) {
  NoGradGuard guard;
  return forward(Var<T>(x), Mode::eval).value();
}

template <typename T>
ParamRegistry<T> R2AUNet<T>::registry() {
  ParamRegistry<T> reg;
  auto add_block = [&reg](const std::string& prefix, Block& b) {
    b.unit.collect(prefix + ".unit", reg);
    if (b.projection) reg.add(prefix + ".proj", *b.projection);
  };
  for (std::size_t k = 0; k < encoder_.size(); ++k) add_block("enc" + std::to_string(k), encoder_[k]);
  add_block("bottleneck", bottleneck_);
  for (std::size_t i = 0; i < decoder_.size(); ++i) {
    const std::string prefix = "dec" + std::to_string(config_.depth - 1 - i);
    reg.add(prefix + ".up_kernel", decoder_[i].up_kernel);
    reg.add(prefix + ".up_bias", decoder_[i].up_bias);
    if (decoder_[i].gate) decoder_[i].gate->collect(prefix + ".gate", reg);
    add_block(prefix, decoder_[i].block);
  }
  reg.add("head.kernel", head_kernel_);
  reg.add("head.bias", head_bias_);
  return reg;
}

template <typename T>
std::size_t R2AUNet<T>::parameter_count() {
  return registry().parameter_count();
}

template <typename T>
Tensor<T> binarize(const Tensor<T>& probabilities, T threshold) {
  if (!(threshold > T{0} && threshold < T{1})) throw ArgumentError("threshold must lie in (0, 1)");
  Tensor<T> out(probabilities.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = probabilities[i] >= threshold ? T{1} : T{0};
  return out;
}

template <typename T>
Tensor<T> predict_mask(R2AUNet<T>& model, const Tensor<T>& x, T threshold) {
  return binarize(model.predict(x), threshold);
}

template <typename From, typename To>
void copy_weights(R2AUNet<From>& from, R2AUNet<To>& to) {
  if (!(from.config() == to.config())) throw ArgumentError("copy_weights: model configs differ");
  ParamRegistry<From> src = from.registry();
  ParamRegistry<To> dst = to.registry();
  for (std::size_t i = 0; i < src.params.size(); ++i) {
    dst.params[i].second.mutable_value() = src.params[i].second.value().template cast<To>();
  }
  for (std::size_t i = 0; i < src.buffers.size(); ++i) {
    *dst.buffers[i].second = src.buffers[i].second->template cast<To>();
  }
}

template class R2AUNet<float>;
template class R2AUNet<double>;
template Tensor<float> binarize<float>(const Tensor<float>&, float);
template Tensor<double> binarize<double>(const Tensor<double>&, double);
template Tensor<float> predict_mask<float>(R2AUNet<float>&, const Tensor<float>&, float);
template Tensor<double> predict_mask<double>(R2AUNet<double>&, const Tensor<double>&, double);
template void copy_weights<float, double>(R2AUNet<float>&, R2AUNet<double>&);
template void copy_weights<double, float>(R2AUNet<double>&, R2AUNet<float>&);
template void copy_weights<float, float>(R2AUNet<float>&, R2AUNet<float>&);
template void copy_weights<double, double>(R2AUNet<double>&, R2AUNet<double>&);

}  // namespace r2au
