#include "spikingformer/train.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "spikingformer/autodiff.hpp"

SPKF_NAMESPACE_BEGIN

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("train: epochs must be >= 1");
  if (batch_size == 0) throw ConfigError("train: batch size must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("train: learning rate must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("train: weight decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("train: Adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("train: Adam epsilon must be positive");
  if (stop_at_accuracy && !(*stop_at_accuracy > 0.0 && *stop_at_accuracy <= 1.0)) {
    throw ConfigError("train: stop_at_accuracy must lie in (0, 1]");
  }
}

double cosine_lr(double base_lr, std::size_t step, std::size_t total_steps) {
  if (total_steps == 0 || step >= total_steps) return 0.0;
  return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * double(step) / double(total_steps)));
}

AdamW::AdamW(std::vector<NamedTensor> params, double beta1, double beta2, double eps, double weight_decay)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

void AdamW::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, double(t_));
  const double c2 = 1.0 - std::pow(beta2_, double(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i].tensor;
    if (!p.has_grad()) continue;
    const auto& g = p.storage()->grad;
    auto w = p.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j];
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * gj;
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * gj * gj;
      double wj = double(w[j]) * (1.0 - lr * weight_decay_);
      wj -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
      w[j] = Real(wj);
    }
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

namespace {

struct StepOutcome {
  double loss = 0.0;
  std::size_t correct = 0;
};

std::size_t count_correct(const Tensor& logits, std::span<const std::size_t> labels) {
  const std::size_t classes = logits.dim(1);
  const auto data = logits.data();
  std::size_t correct = 0;
  for (std::size_t b = 0; b < labels.size(); ++b) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < classes; ++c)
      if (data[b * classes + c] > data[b * classes + best]) best = c;
    correct += best == labels[b];
  }
  return correct;
}

StepOutcome forward_backward(Model& model, const Batch& batch, NeuronMode mode, bool training) {
  Tape tape;
  StepOutcome out;
  {
    TapeScope scope(tape);
    ForwardOptions options;
    options.training = training;
    options.mode = mode;
    Tensor logits = model.forward(batch.input, options);
    Tensor loss = cross_entropy(logits, batch.labels);
    out.loss = double(loss.item());
    out.correct = count_correct(logits, batch.labels);
    if (!std::isfinite(out.loss)) throw TrainingDiverged("train: loss became non-finite");
    tape.backward(loss);
  }
  return out;
}

void check_dataset(const Model& model, const Dataset& dataset) {
  if (dataset.size() == 0) throw ConfigError("train: dataset is empty");
  if (dataset.classes != model.config().classes) {
    throw ConfigError("train: dataset has " + std::to_string(dataset.classes) + " classes, model expects " +
                      std::to_string(model.config().classes));
  }
}

}  // namespace

double loss_and_gradients(Model& model, const Batch& batch, NeuronMode mode, bool training) {
  return forward_backward(model, batch, mode, training).loss;
}

TrainResult train(Model& model, const Dataset& dataset, const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  check_dataset(model, dataset);
  if (model.fused()) throw ConfigError("train: a fused model has no batch norm to train");

  const std::size_t n = dataset.size();
  const std::size_t steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const std::size_t total_steps = steps_per_epoch * config.epochs;

  AdamW optimizer(model.parameters(), config.beta1, config.beta2, config.adam_eps, config.weight_decay);
  Rng rng(config.seed);
  std::vector<std::size_t> order(n);
  TrainResult result;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    double loss_sum = 0.0;
    std::size_t correct = 0;
    double lr = 0.0;
    for (std::size_t begin = 0; begin < n; begin += config.batch_size) {
      const std::size_t end = std::min(n, begin + config.batch_size);
      const Batch batch = dataset.batch(std::span<const std::size_t>(order.data() + begin, end - begin));
      lr = cosine_lr(config.lr, optimizer.steps(), total_steps);
      optimizer.zero_grad();
      const StepOutcome step = forward_backward(model, batch, config.mode, true);
      optimizer.step(lr);
      loss_sum += step.loss * double(end - begin);
      correct += step.correct;
    }

    EpochMetrics metrics;
    metrics.epoch = epoch + 1;
    metrics.step = optimizer.steps();
    metrics.loss = loss_sum / double(n);
    metrics.accuracy = double(correct) / double(n);
    metrics.lr = lr;
    result.log.push_back(metrics);
    if (on_epoch) on_epoch(metrics);
    if (config.stop_at_accuracy && metrics.accuracy >= *config.stop_at_accuracy) break;
  }
  return result;
}

EvalResult evaluate(Model& model, const Dataset& dataset, std::size_t batch_size, bool keep_logits) {
  if (batch_size == 0) throw ConfigError("evaluate: batch size must be >= 1");
  check_dataset(model, dataset);
  NoGradScope no_grad;
  EvalResult result;
  double loss_sum = 0.0;
  std::size_t correct = 0;
  const std::size_t classes = model.config().classes;
  for (std::size_t begin = 0; begin < dataset.size(); begin += batch_size) {
    const std::size_t end = std::min(dataset.size(), begin + batch_size);
    const Batch batch = dataset.batch(begin, end);
    Tensor logits = model.forward(batch.input);
    loss_sum += double(cross_entropy(logits, batch.labels).item()) * double(end - begin);
    correct += count_correct(logits, batch.labels);
    if (keep_logits) {
      const auto data = logits.data();
      for (std::size_t b = 0; b < end - begin; ++b)
        result.logits.emplace_back(data.begin() + b * classes, data.begin() + (b + 1) * classes);
    }
  }
  result.samples = dataset.size();
  result.accuracy = double(correct) / double(result.samples);
  result.loss = loss_sum / double(result.samples);
  return result;
}

std::string metrics_csv(const std::vector<EpochMetrics>& log) {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,step,loss,accuracy,lr\n";
  for (const auto& m : log) out << m.epoch << ',' << m.step << ',' << m.loss << ',' << m.accuracy << ',' << m.lr << '\n';
  return out.str();
}

SPKF_NAMESPACE_END
