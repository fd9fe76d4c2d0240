#include "spikingformer/model.hpp"

#include <algorithm>

#include "spikingformer/autodiff.hpp"

SPKF_NAMESPACE_BEGIN

ModelConfig ModelConfig::cifar(std::size_t blocks, std::size_t dim, std::size_t classes) {
  ModelConfig c;
  c.blocks = blocks;
  c.dim = dim;
  c.heads = dim % 32 == 0 ? dim / 32 : 1;
  c.timesteps = 4;
  c.tokenizer = {TokenizerUnit::kSpe, TokenizerUnit::kSpe, TokenizerUnit::kSped, TokenizerUnit::kSped};
  c.in_channels = 3;
  c.height = c.width = 32;
  c.classes = classes;
  return c;
}

ModelConfig ModelConfig::imagenet(std::size_t blocks, std::size_t dim) {
  ModelConfig c;
  c.blocks = blocks;
  c.dim = dim;
  c.heads = dim % 64 == 0 ? dim / 64 : 1;
  c.timesteps = 4;
  c.tokenizer = {TokenizerUnit::kSped, TokenizerUnit::kSped, TokenizerUnit::kSped, TokenizerUnit::kSped};
  c.in_channels = 3;
  c.height = c.width = 224;
  c.classes = 1000;
  return c;
}

ModelConfig ModelConfig::desk(std::size_t blocks, std::size_t dim, std::size_t classes) {
  ModelConfig c;
  c.blocks = blocks;
  c.dim = dim;
  c.heads = dim % 16 == 0 ? dim / 16 : 1;
  c.timesteps = 2;
  c.tokenizer = {TokenizerUnit::kSped, TokenizerUnit::kSped};
  c.in_channels = 3;
  c.height = c.width = 16;
  c.classes = classes;
  return c;
}

void ModelConfig::validate() const {
  if (blocks == 0) throw ConfigError("model: block count L must be >= 1");
  if (timesteps == 0) throw ConfigError("model: time steps T must be >= 1");
  if (dim == 0 || heads == 0 || dim % heads != 0) {
    throw ConfigError("model: dim " + std::to_string(dim) + " must be divisible by heads " +
                      std::to_string(heads));
  }
  if (!(scale > Real(0))) throw ConfigError("model: attention scale must be positive");
  if (mlp_ratio == 0) throw ConfigError("model: mlp ratio must be >= 1");
  if (classes == 0) throw ConfigError("model: class count must be >= 1");
  if (in_channels == 0) throw ConfigError("model: input channels must be >= 1");
  const std::size_t divisor = tokenizer.empty() ? 1 : (std::size_t{1} << (tokenizer.size() - 1));
  if (dim % divisor != 0) {
    throw ConfigError("model: dim " + std::to_string(dim) + " not divisible by " + std::to_string(divisor) +
                      " required by the tokenizer plan");
  }
  std::size_t h = height, w = width;
  for (TokenizerUnit u : tokenizer) {
    if (u != TokenizerUnit::kSped) continue;
    if (h < 2 || w < 2) throw ConfigError("model: input too small for the tokenizer's downsampling");
    h /= 2;
    w /= 2;
  }
  if (h == 0 || w == 0) throw ConfigError("model: empty token map");
  try {
    lif.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
}

std::size_t ModelConfig::token_height() const {
  std::size_t h = height;
  for (TokenizerUnit u : tokenizer)
    if (u == TokenizerUnit::kSped) h /= 2;
  return h;
}

std::size_t ModelConfig::token_width() const {
  std::size_t w = width;
  for (TokenizerUnit u : tokenizer)
    if (u == TokenizerUnit::kSped) w /= 2;
  return w;
}

std::string ModelConfig::label() const {
  const char* family = residual == ResidualStyle::kSpikeDriven ? "Spikingformer" : "Spikformer";
  return std::string(family) + "-" + std::to_string(blocks) + "-" + std::to_string(dim);
}

Model::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  tokenizer = SpikingTokenizer(config_.in_channels, config_.dim, config_.tokenizer, config_.residual);
  blocks.reserve(config_.blocks);
  for (std::size_t l = 0; l < config_.blocks; ++l) {
    blocks.emplace_back("blocks." + std::to_string(l), config_.dim, config_.heads, config_.scale,
                        config_.mlp_ratio, config_.residual);
  }
  head = ClassificationHead(config_.dim, config_.classes, config_.head);
  Rng rng(seed);
  tokenizer.init(rng);
  for (auto& b : blocks) b.init(rng);
  head.init(rng);
}

Tensor Model::forward(const Tensor& input, const ForwardOptions& options) {
  const std::size_t T = config_.timesteps;
  Tensor x;
  if (input.rank() == 4) {
    if (input.dim(1) != config_.in_channels || input.dim(2) != config_.height || input.dim(3) != config_.width) {
      throw ShapeError("model: input " + shape_to_string(input.shape()) + " does not match geometry [B," +
                       std::to_string(config_.in_channels) + "," + std::to_string(config_.height) + "," +
                       std::to_string(config_.width) + "]");
    }
    x = repeat_time(input, T);
  } else if (input.rank() == 5) {
    if (input.dim(0) != T || input.dim(2) != config_.in_channels || input.dim(3) != config_.height ||
        input.dim(4) != config_.width) {
      throw ShapeError("model: frame input " + shape_to_string(input.shape()) + " does not match [T=" +
                       std::to_string(T) + ",B," + std::to_string(config_.in_channels) + "," +
                       std::to_string(config_.height) + "," + std::to_string(config_.width) + "]");
    }
    x = reshape(input, {T * input.dim(1), input.dim(2), input.dim(3), input.dim(4)});
  } else {
    throw ShapeError("model: expected [B,C,H,W] or [T,B,C,H,W] input, got " + shape_to_string(input.shape()));
  }

  ForwardContext ctx;
  ctx.timesteps = T;
  ctx.training = options.training;
  ctx.mode = options.mode;
  ctx.lif = config_.lif;
  ctx.recorder = options.recorder;

  Tensor tokens = tokenizer.forward(x, ctx);
  for (auto& block : blocks) tokens = block.forward(tokens, ctx);
  return head.forward(tokens, ctx);
}

std::vector<NamedTensor> Model::parameters() const {
  std::vector<NamedTensor> params, buffers;
  tokenizer.collect(params, buffers);
  for (const auto& b : blocks) b.collect(params, buffers);
  head.collect(params);
  return params;
}

std::vector<NamedTensor> Model::buffers() const {
  std::vector<NamedTensor> params, buffers;
  tokenizer.collect(params, buffers);
  for (const auto& b : blocks) b.collect(params, buffers);
  return buffers;
}

std::size_t Model::param_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.numel();
  return n;
}

std::vector<ConvBN*> Model::convbn_layers() {
  std::vector<ConvBN*> layers{&tokenizer.stem};
  for (auto& u : tokenizer.units) layers.push_back(&u);
  for (auto& b : blocks) {
    for (ConvBN* l : {&b.attn.q, &b.attn.k, &b.attn.v, &b.attn.proj, &b.mlp.fc1, &b.mlp.fc2})
      layers.push_back(l);
  }
  return layers;
}

void Model::fuse() {
  for (ConvBN* layer : convbn_layers()) layer->fuse();
}

bool Model::fused() const {
  return tokenizer.stem.fused();
}

std::size_t expected_param_count(const ModelConfig& config) {
  config.validate();
  const std::size_t D = config.dim, k = config.tokenizer.size();
  const auto convbn = [](std::size_t in, std::size_t out, std::size_t kernel, bool bias) {
    return in * out * kernel * kernel + (bias ? out : 0) + 2 * out;
  };
  std::size_t channels = k == 0 ? D : D >> (k - 1);
  std::size_t total = convbn(config.in_channels, channels, 3, false);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t out = std::min(D, channels * 2);
    total += convbn(channels, out, 3, false);
    channels = out;
  }
  const std::size_t hidden = D * config.mlp_ratio;
  const std::size_t block = 3 * convbn(D, D, 1, false) + convbn(D, D, 1, true) + convbn(D, hidden, 1, true) +
                            convbn(hidden, D, 1, true);
  total += config.blocks * block;
  total += D * config.classes + config.classes;
  return total;
}

void calibrate_batch_norm(Model& model, const Tensor& input) {
  if (model.fused()) throw std::logic_error("calibrate_batch_norm: model is fused");
  std::vector<Real> saved;
  for (ConvBN* layer : model.convbn_layers()) {
    saved.push_back(layer->bn->momentum);
    layer->bn->momentum = Real(1);
  }
  {
    NoGradScope no_grad;
    ForwardOptions options;
    options.training = true;
    model.forward(input, options);
  }
  std::size_t i = 0;
  for (ConvBN* layer : model.convbn_layers()) layer->bn->momentum = saved[i++];
}

std::map<std::string, double> max_convbn_input(Model& model, std::span<const Tensor> batches,
                                               bool include_encoder) {
  ActivityRecorder recorder;
  NoGradScope no_grad;
  ForwardOptions options;
  options.recorder = &recorder;
  for (const Tensor& batch : batches) model.forward(batch, options);
  std::map<std::string, double> result;
  for (const auto& layer : recorder.layers()) {
    if (layer.kind == LayerKind::kSsaMatmul) continue;
    if (layer.kind == LayerKind::kEncoderConv && !include_encoder) continue;
    result[layer.name] = layer.max_value;
  }
  return result;
}

SPKF_NAMESPACE_END
