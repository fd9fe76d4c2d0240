#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "spikingformer/activity.hpp"
#include "spikingformer/neuron.hpp"
#include "spikingformer/ops.hpp"
#include "spikingformer/tensor.hpp"

SPKF_NAMESPACE_BEGIN

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Deterministic generator used for initialization and synthetic data.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform();  // [0, 1)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  std::uint64_t next() { return engine_(); }
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(uniform() * double(n)); }

 private:
  std::mt19937_64 engine_;
};

enum class ResidualStyle {
  kSpikeDriven,        // O_l = ConvBN(SN(O_{l-1})) + O_{l-1}
  kPostActivationAdd,  // O_l = SN(ConvBN(O_{l-1})) + O_{l-1}
};

/// Per-pass settings shared by every layer of one forward.
struct ForwardContext {
  std::size_t timesteps = 1;
  bool training = false;
  NeuronMode mode = NeuronMode::kSpiking;
  LifParams lif;
  ActivityRecorder* recorder = nullptr;
};

/// SN layer: multistep LIF with the context's parameters.
Tensor spike_neuron(const Tensor& x, const ForwardContext& ctx, Real input_scale = Real(1));

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride,
         std::size_t padding, bool with_bias);

  Tensor forward(const Tensor& x) const;
  /// Kaiming-uniform kernel (bound sqrt(6 / fan_in)), zero bias.
  void init(Rng& rng);
  /// MACs per sample for an input of the given [B,C,H,W] shape.
  double flops_per_sample(const Shape& input_shape) const;

  std::size_t in_channels() const { return weight.dim(1); }
  std::size_t out_channels() const { return weight.dim(0); }
  std::size_t kernel_size() const { return weight.dim(2); }

  Tensor weight;
  std::optional<Tensor> bias;
  std::size_t stride = 1;
  std::size_t padding = 0;
};

class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  explicit BatchNorm2d(std::size_t channels);

  Tensor forward(const Tensor& x, const ForwardContext& ctx);

  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
  Real eps = Real(1e-5);
  Real momentum = Real(0.1);
  /// False when running statistics are absent (e.g. not loaded).
  bool stats_ready = true;
};

/// A convolution followed by batch norm. After fuse() the norm is folded into
/// the conv kernel and bias and `bn` is empty.
class ConvBN {
 public:
  ConvBN() = default;
  ConvBN(std::string name, LayerKind kind, std::size_t in_channels, std::size_t out_channels,
         std::size_t kernel, std::size_t stride, std::size_t padding, bool conv_bias);

  /// Reports the input to ctx.recorder before computing.
  Tensor forward(const Tensor& x, const ForwardContext& ctx);
  void init(Rng& rng) { conv.init(rng); }
  void fuse();
  bool fused() const { return !bn.has_value(); }

  void collect(std::vector<NamedTensor>& params, std::vector<NamedTensor>& buffers) const;

  std::string name;
  LayerKind kind = LayerKind::kSnnConv;
  Conv2d conv;
  std::optional<BatchNorm2d> bn;
};

/// Folds BN into the conv: W = w_bn * w_conv, B = w_bn * b_conv + b_bn with
/// w_bn = gamma / sqrt(var + eps), b_bn = beta - gamma * mean / sqrt(var + eps).
/// Throws if the layer has no running statistics.
Conv2d fuse_convbn(const ConvBN& layer);

/// S_l + O_{l-1}, both real-valued post-ConvBN tensors.
Tensor spike_residual_add(const Tensor& residual, const Tensor& shortcut);

/// ConvBN(SN(x)).
Tensor spe(const Tensor& x, ConvBN& layer, const ForwardContext& ctx);
/// ConvBN(MP(SN(x))).
Tensor sped(const Tensor& x, ConvBN& layer, const ForwardContext& ctx);

enum class TokenizerUnit { kSpe, kSped };

class SpikingTokenizer {
 public:
  SpikingTokenizer() = default;
  /// Stem width is dim / 2^(k-1) for a k-unit plan, doubling per unit up to dim.
  SpikingTokenizer(std::size_t in_channels, std::size_t dim, std::vector<TokenizerUnit> plan,
                   ResidualStyle style);

  /// [T*B,C,H,W] -> [T*B,D,h,w] token map (N = h*w).
  Tensor forward(const Tensor& x, const ForwardContext& ctx);
  void init(Rng& rng);
  void collect(std::vector<NamedTensor>& params, std::vector<NamedTensor>& buffers) const;

  ConvBN stem;
  std::vector<ConvBN> units;
  std::vector<TokenizerUnit> plan;
  ResidualStyle style = ResidualStyle::kSpikeDriven;
};

class SpikingSelfAttention {
 public:
  SpikingSelfAttention() = default;
  SpikingSelfAttention(std::string name, std::size_t dim, std::size_t heads, Real scale,
                       ResidualStyle style);

  /// [T*B,D,h,w] -> same shape.
  Tensor forward(const Tensor& x, const ForwardContext& ctx);
  void init(Rng& rng);
  void collect(std::vector<NamedTensor>& params, std::vector<NamedTensor>& buffers) const;

  std::string name;
  std::size_t heads = 1;
  Real scale = Real(0.125);
  ResidualStyle style = ResidualStyle::kSpikeDriven;
  ConvBN q, k, v, proj;
};

class SpikingMlp {
 public:
  SpikingMlp() = default;
  SpikingMlp(std::string name, std::size_t dim, std::size_t hidden, ResidualStyle style);

  Tensor forward(const Tensor& x, const ForwardContext& ctx);
  void init(Rng& rng);
  void collect(std::vector<NamedTensor>& params, std::vector<NamedTensor>& buffers) const;

  ResidualStyle style = ResidualStyle::kSpikeDriven;
  ConvBN fc1, fc2;
};

class SpikingTransformerBlock {
 public:
  SpikingTransformerBlock() = default;
  SpikingTransformerBlock(std::string name, std::size_t dim, std::size_t heads, Real scale,
                          std::size_t mlp_ratio, ResidualStyle style);

  /// X' = SSA(X) + X; out = SMLP(X') + X'.
  Tensor forward(const Tensor& x, const ForwardContext& ctx);
  void init(Rng& rng);
  void collect(std::vector<NamedTensor>& params, std::vector<NamedTensor>& buffers) const;

  SpikingSelfAttention attn;
  SpikingMlp mlp;
};

enum class HeadVariant { kAvgPoolFc, kSnAvgPoolFc, kFcAvgPool, kSnFcAvgPool };

const char* to_string(HeadVariant variant);
HeadVariant head_variant_from_string(const std::string& text);

class ClassificationHead {
 public:
  ClassificationHead() = default;
  ClassificationHead(std::size_t dim, std::size_t classes, HeadVariant variant);

  /// [T*B,D,h,w] -> [B, classes]; pooling averages tokens and time steps.
  Tensor forward(const Tensor& x, const ForwardContext& ctx) const;
  void init(Rng& rng);
  void collect(std::vector<NamedTensor>& params) const;

  HeadVariant variant = HeadVariant::kAvgPoolFc;
  Tensor weight;  // [classes, D]
  Tensor bias;    // [classes]
};

SPKF_NAMESPACE_END
