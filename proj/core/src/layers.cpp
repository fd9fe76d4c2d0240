#include "spikingformer/layers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

SPKF_NAMESPACE_BEGIN

double Rng::uniform() {
  // 53 random bits, independent of the standard library's distributions.
  return double(engine_() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

Tensor spike_neuron(const Tensor& x, const ForwardContext& ctx, Real input_scale) {
  return multistep_lif(x, ctx.timesteps, ctx.lif, ctx.mode, input_scale);
}

// Conv2d

Conv2d::Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride_,
               std::size_t padding_, bool with_bias)
    : weight(Shape{out_channels, in_channels, kernel, kernel}), stride(stride_), padding(padding_) {
  weight.set_requires_grad();
  if (with_bias) {
    bias = Tensor::zeros({out_channels});
    bias->set_requires_grad();
  }
}

Tensor Conv2d::forward(const Tensor& x) const {
  return conv2d(x, weight, bias ? &*bias : nullptr, stride, padding);
}

void Conv2d::init(Rng& rng) {
  const double fan_in = double(weight.dim(1) * weight.dim(2) * weight.dim(3));
  const double bound = std::sqrt(6.0 / fan_in);
  for (auto& w : weight.mutable_data()) w = static_cast<Real>(rng.uniform(-bound, bound));
  if (bias) std::fill(bias->mutable_data().begin(), bias->mutable_data().end(), Real(0));
}

double Conv2d::flops_per_sample(const Shape& input_shape) const {
  const std::size_t k = kernel_size();
  const std::size_t oh = (input_shape.at(2) + 2 * padding - k) / stride + 1;
  const std::size_t ow = (input_shape.at(3) + 2 * padding - k) / stride + 1;
  return double(oh * ow * out_channels()) * double(in_channels() * k * k);
}

// BatchNorm2d

BatchNorm2d::BatchNorm2d(std::size_t channels)
    : gamma(Tensor::ones({channels})),
      beta(Tensor::zeros({channels})),
      running_mean(Tensor::zeros({channels})),
      running_var(Tensor::ones({channels})) {
  gamma.set_requires_grad();
  beta.set_requires_grad();
}

Tensor BatchNorm2d::forward(const Tensor& x, const ForwardContext& ctx) {
  if (!ctx.training && !stats_ready) {
    throw std::logic_error("batch norm: running statistics missing in eval mode");
  }
  BatchNormOptions options{eps, momentum, ctx.training};
  Tensor y = batch_norm(x, gamma, beta, running_mean, running_var, options);
  if (ctx.training) stats_ready = true;
  return y;
}

// ConvBN

ConvBN::ConvBN(std::string name_, LayerKind kind_, std::size_t in_channels, std::size_t out_channels,
               std::size_t kernel, std::size_t stride, std::size_t padding, bool conv_bias)
    : name(std::move(name_)),
      kind(kind_),
      conv(in_channels, out_channels, kernel, stride, padding, conv_bias),
      bn(BatchNorm2d(out_channels)) {}

Tensor ConvBN::forward(const Tensor& x, const ForwardContext& ctx) {
  if (ctx.recorder != nullptr) {
    ctx.recorder->observe(name, kind, x, conv.flops_per_sample(x.shape()), x.dim(0));
  }
  Tensor y = conv.forward(x);
  if (bn) y = bn->forward(y, ctx);
  return y;
}

void ConvBN::fuse() {
  if (!bn) return;
  conv = fuse_convbn(*this);
  bn.reset();
}

void ConvBN::collect(std::vector<NamedTensor>& params, std::vector<NamedTensor>& buffers) const {
  params.push_back({name + ".conv.weight", conv.weight});
  if (conv.bias) params.push_back({name + ".conv.bias", *conv.bias});
  if (bn) {
    params.push_back({name + ".bn.weight", bn->gamma});
    params.push_back({name + ".bn.bias", bn->beta});
    buffers.push_back({name + ".bn.running_mean", bn->running_mean});
    buffers.push_back({name + ".bn.running_var", bn->running_var});
  }
}

Conv2d fuse_convbn(const ConvBN& layer) {
  if (!layer.bn) throw std::invalid_argument("fuse_convbn: layer " + layer.name + " is already fused");
  const BatchNorm2d& bn = *layer.bn;
  if (!bn.stats_ready) {
    throw std::invalid_argument("fuse_convbn: layer " + layer.name + " has no running statistics");
  }
  const Conv2d& src = layer.conv;
  const std::size_t out = src.out_channels();
  const std::size_t per_out = src.weight.numel() / out;
  Conv2d fused(src.in_channels(), out, src.kernel_size(), src.stride, src.padding, true);
  auto w = fused.weight.mutable_data();
  auto b = fused.bias->mutable_data();
  const auto w0 = src.weight.data();
  for (std::size_t o = 0; o < out; ++o) {
    const double denom = double(bn.running_var[o]) + double(bn.eps);
    if (!(denom > 0.0)) throw std::invalid_argument("fuse_convbn: non-positive variance in " + layer.name);
    const double w_bn = double(bn.gamma[o]) / std::sqrt(denom);
    const double b_bn = double(bn.beta[o]) - w_bn * double(bn.running_mean[o]);
    const double b_conv = src.bias ? double((*src.bias)[o]) : 0.0;
    for (std::size_t i = 0; i < per_out; ++i)
      w[o * per_out + i] = static_cast<Real>(w_bn * double(w0[o * per_out + i]));
    b[o] = static_cast<Real>(w_bn * b_conv + b_bn);
  }
  return fused;
}

Tensor spike_residual_add(const Tensor& residual, const Tensor& shortcut) {
  require_same_shape(residual, shortcut, "spike_residual_add");
  return add(residual, shortcut);
}

Tensor spe(const Tensor& x, ConvBN& layer, const ForwardContext& ctx) {
  return layer.forward(spike_neuron(x, ctx), ctx);
}

Tensor sped(const Tensor& x, ConvBN& layer, const ForwardContext& ctx) {
  return layer.forward(max_pool2d(spike_neuron(x, ctx)), ctx);
}

// SpikingTokenizer

SpikingTokenizer::SpikingTokenizer(std::size_t in_channels, std::size_t dim, std::vector<TokenizerUnit> plan_,
                                   ResidualStyle style_)
    : plan(std::move(plan_)), style(style_) {
  const std::size_t k = plan.size();
  const std::size_t divisor = k == 0 ? 1 : (std::size_t{1} << (k - 1));
  if (dim % divisor != 0) {
    throw std::invalid_argument("tokenizer: dim " + std::to_string(dim) + " not divisible by " +
                                std::to_string(divisor) + " for a " + std::to_string(k) + "-unit plan");
  }
  std::size_t channels = dim / divisor;
  stem = ConvBN("tokenizer.stem", LayerKind::kEncoderConv, in_channels, channels, 3, 1, 1, false);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t out = std::min(dim, channels * 2);
    units.emplace_back("tokenizer.units." + std::to_string(i), LayerKind::kSnnConv, channels, out, 3, 1, 1,
                       false);
    channels = out;
  }
}

Tensor SpikingTokenizer::forward(const Tensor& x, const ForwardContext& ctx) {
  if (style == ResidualStyle::kSpikeDriven) {
    Tensor y = stem.forward(x, ctx);
    for (std::size_t i = 0; i < units.size(); ++i)
      y = plan[i] == TokenizerUnit::kSped ? sped(y, units[i], ctx) : spe(y, units[i], ctx);
    return y;
  }
  Tensor y = spike_neuron(stem.forward(x, ctx), ctx);
  for (std::size_t i = 0; i < units.size(); ++i) {
    Tensor in = plan[i] == TokenizerUnit::kSped ? max_pool2d(y) : y;
    y = spike_neuron(units[i].forward(in, ctx), ctx);
  }
  return y;
}

void SpikingTokenizer::init(Rng& rng) {
  stem.init(rng);
  for (auto& u : units) u.init(rng);
}

void SpikingTokenizer::collect(std::vector<NamedTensor>& params, std::vector<NamedTensor>& buffers) const {
  stem.collect(params, buffers);
  for (const auto& u : units) u.collect(params, buffers);
}

// SpikingSelfAttention

SpikingSelfAttention::SpikingSelfAttention(std::string name_, std::size_t dim, std::size_t heads_, Real scale_,
                                           ResidualStyle style_)
    : name(std::move(name_)),
      heads(heads_),
      scale(scale_),
      style(style_),
      q(name + ".q", LayerKind::kSnnConv, dim, dim, 1, 1, 0, false),
      k(name + ".k", LayerKind::kSnnConv, dim, dim, 1, 1, 0, false),
      v(name + ".v", LayerKind::kSnnConv, dim, dim, 1, 1, 0, false),
      proj(name + ".proj", LayerKind::kSnnConv, dim, dim, 1, 1, 0, true) {
  if (heads == 0 || dim % heads != 0) {
    throw std::invalid_argument("attention: dim " + std::to_string(dim) + " not divisible by " +
                                std::to_string(heads) + " heads");
  }
  if (!(scale > Real(0))) throw std::invalid_argument("attention: scale must be positive");
}

Tensor SpikingSelfAttention::forward(const Tensor& x, const ForwardContext& ctx) {
  const bool spike_driven = style == ResidualStyle::kSpikeDriven;
  const Tensor input = spike_driven ? spike_neuron(x, ctx) : x;
  Tensor qs = spike_neuron(q.forward(input, ctx), ctx);
  Tensor ks = spike_neuron(k.forward(input, ctx), ctx);
  Tensor vs = spike_neuron(v.forward(input, ctx), ctx);
  if (ctx.recorder != nullptr) {
    const double tokens = double(x.dim(2) * x.dim(3));
    const double flops = tokens * tokens * double(x.dim(1));
    ctx.recorder->observe(name + ".ssa.q", LayerKind::kSsaMatmul, qs, flops, x.dim(0));
    ctx.recorder->observe(name + ".ssa.k", LayerKind::kSsaMatmul, ks, flops, x.dim(0));
    ctx.recorder->observe(name + ".ssa.v", LayerKind::kSsaMatmul, vs, flops, x.dim(0));
  }
  Tensor core = attention_core(qs, ks, vs, heads);
  Tensor fired = spike_neuron(core, ctx, scale);
  Tensor out = proj.forward(fired, ctx);
  return spike_driven ? out : spike_neuron(out, ctx);
}

void SpikingSelfAttention::init(Rng& rng) {
  q.init(rng);
  k.init(rng);
  v.init(rng);
  proj.init(rng);
}

void SpikingSelfAttention::collect(std::vector<NamedTensor>& params, std::vector<NamedTensor>& buffers) const {
  q.collect(params, buffers);
  k.collect(params, buffers);
  v.collect(params, buffers);
  proj.collect(params, buffers);
}

// SpikingMlp

SpikingMlp::SpikingMlp(std::string name, std::size_t dim, std::size_t hidden, ResidualStyle style_)
    : style(style_),
      fc1(name + ".fc1", LayerKind::kSnnConv, dim, hidden, 1, 1, 0, true),
      fc2(name + ".fc2", LayerKind::kSnnConv, hidden, dim, 1, 1, 0, true) {}

Tensor SpikingMlp::forward(const Tensor& x, const ForwardContext& ctx) {
  if (style == ResidualStyle::kSpikeDriven) {
    Tensor hidden = spe(x, fc1, ctx);
    return spe(hidden, fc2, ctx);
  }
  Tensor hidden = spike_neuron(fc1.forward(x, ctx), ctx);
  return spike_neuron(fc2.forward(hidden, ctx), ctx);
}

void SpikingMlp::init(Rng& rng) {
  fc1.init(rng);
  fc2.init(rng);
}

void SpikingMlp::collect(std::vector<NamedTensor>& params, std::vector<NamedTensor>& buffers) const {
  fc1.collect(params, buffers);
  fc2.collect(params, buffers);
}

// SpikingTransformerBlock

SpikingTransformerBlock::SpikingTransformerBlock(std::string name, std::size_t dim, std::size_t heads, Real scale,
                                                 std::size_t mlp_ratio, ResidualStyle style)
    : attn(name + ".attn", dim, heads, scale, style), mlp(name + ".mlp", dim, dim * mlp_ratio, style) {}

Tensor SpikingTransformerBlock::forward(const Tensor& x, const ForwardContext& ctx) {
  Tensor mid = spike_residual_add(attn.forward(x, ctx), x);
  return spike_residual_add(mlp.forward(mid, ctx), mid);
}

void SpikingTransformerBlock::init(Rng& rng) {
  attn.init(rng);
  mlp.init(rng);
}

void SpikingTransformerBlock::collect(std::vector<NamedTensor>& params, std::vector<NamedTensor>& buffers) const {
  attn.collect(params, buffers);
  mlp.collect(params, buffers);
}

// ClassificationHead

const char* to_string(HeadVariant variant) {
  switch (variant) {
    case HeadVariant::kAvgPoolFc: return "avgpool-fc";
    case HeadVariant::kSnAvgPoolFc: return "sn-avgpool-fc";
    case HeadVariant::kFcAvgPool: return "fc-avgpool";
    case HeadVariant::kSnFcAvgPool: return "sn-fc-avgpool";
  }
  return "unknown";
}

HeadVariant head_variant_from_string(const std::string& text) {
  for (HeadVariant v : {HeadVariant::kAvgPoolFc, HeadVariant::kSnAvgPoolFc, HeadVariant::kFcAvgPool,
                        HeadVariant::kSnFcAvgPool}) {
    if (text == to_string(v)) return v;
  }
  throw std::invalid_argument("unknown head variant '" + text + "'");
}

ClassificationHead::ClassificationHead(std::size_t dim, std::size_t classes, HeadVariant variant_)
    : variant(variant_), weight(Shape{classes, dim}), bias(Tensor::zeros({classes})) {
  weight.set_requires_grad();
  bias.set_requires_grad();
}

Tensor ClassificationHead::forward(const Tensor& x, const ForwardContext& ctx) const {
  const bool spiking = variant == HeadVariant::kSnAvgPoolFc || variant == HeadVariant::kSnFcAvgPool;
  const Tensor in = spiking ? spike_neuron(x, ctx) : x;
  if (variant == HeadVariant::kAvgPoolFc || variant == HeadVariant::kSnAvgPoolFc) {
    return linear(time_mean(global_avg_pool(in), ctx.timesteps), weight, &bias);
  }
  const Tensor kernel = reshape(weight, {weight.dim(0), weight.dim(1), 1, 1});
  return time_mean(global_avg_pool(conv2d(in, kernel, &bias, 1, 0)), ctx.timesteps);
}

void ClassificationHead::init(Rng& rng) {
  const double bound = 1.0 / std::sqrt(double(weight.dim(1)));
  for (auto& w : weight.mutable_data()) w = static_cast<Real>(rng.uniform(-bound, bound));
  std::fill(bias.mutable_data().begin(), bias.mutable_data().end(), Real(0));
}

void ClassificationHead::collect(std::vector<NamedTensor>& params) const {
  params.push_back({"head.fc.weight", weight});
  params.push_back({"head.fc.bias", bias});
}

SPKF_NAMESPACE_END
