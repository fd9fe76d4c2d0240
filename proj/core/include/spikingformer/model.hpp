#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "spikingformer/layers.hpp"

SPKF_NAMESPACE_BEGIN

/// Raised for inconsistent model or training configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ModelConfig {
  std::size_t blocks = 4;      // L
  std::size_t dim = 384;       // D
  std::size_t heads = 12;      // H
  std::size_t timesteps = 4;   // T
  Real scale = Real(0.125);    // attention scale s
  std::size_t mlp_ratio = 4;
  std::vector<TokenizerUnit> tokenizer = {TokenizerUnit::kSpe, TokenizerUnit::kSpe,
                                          TokenizerUnit::kSped, TokenizerUnit::kSped};
  HeadVariant head = HeadVariant::kAvgPoolFc;
  ResidualStyle residual = ResidualStyle::kSpikeDriven;
  std::size_t in_channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t classes = 10;
  LifParams lif;

  /// Spikingformer-L-D with the 32x32 plan (stem, 2 SPE, 2 SPED): 64 tokens.
  static ModelConfig cifar(std::size_t blocks, std::size_t dim, std::size_t classes = 10);
  /// Spikingformer-L-D with the 224x224 plan (stem, 4 SPED): 196 tokens.
  static ModelConfig imagenet(std::size_t blocks, std::size_t dim);
  /// Desk-scale Spikingformer-L-D: 3x16x16 input, stem + 2 SPED (16 tokens), T = 2.
  static ModelConfig desk(std::size_t blocks, std::size_t dim, std::size_t classes = 4);

  void validate() const;
  std::size_t token_height() const;
  std::size_t token_width() const;
  std::size_t tokens() const { return token_height() * token_width(); }
  std::string label() const;  // "Spikingformer-L-D" or "Spikformer-L-D"
};

struct ForwardOptions {
  bool training = false;
  NeuronMode mode = NeuronMode::kSpiking;
  ActivityRecorder* recorder = nullptr;
};

class Model {
 public:
  explicit Model(ModelConfig config, std::uint64_t seed = 0);

  /// input: [B,C,H,W] static images (repeated at every time step) or
  /// [T,B,C,H,W] frame sequences. Returns logits [B, classes]. Membrane state
  /// starts at V_reset on every call.
  Tensor forward(const Tensor& input, const ForwardOptions& options = {});

  const ModelConfig& config() const { return config_; }
  ModelConfig& mutable_config() { return config_; }

  /// Trainable tensors with stable unique names (aliases of the live storage).
  std::vector<NamedTensor> parameters() const;
  /// Non-trainable state: BN running statistics.
  std::vector<NamedTensor> buffers() const;
  std::size_t param_count() const;

  /// Folds every BN into its conv.
  void fuse();
  bool fused() const;

  std::vector<ConvBN*> convbn_layers();

  SpikingTokenizer tokenizer;
  std::vector<SpikingTransformerBlock> blocks;
  ClassificationHead head;

 private:
  ModelConfig config_;
};

/// Trainable scalar count computed from the configuration alone.
std::size_t expected_param_count(const ModelConfig& config);

/// Sets every BN's running statistics to the statistics of one training-mode
/// pass over `input` (no gradients recorded). Gives freshly built models
/// realistic eval-mode activity.
void calibrate_batch_norm(Model& model, const Tensor& input);

/// Per-layer maximum ConvBN input value over the given input batches.
std::map<std::string, double> max_convbn_input(Model& model, std::span<const Tensor> batches,
                                               bool include_encoder = false);

SPKF_NAMESPACE_END
