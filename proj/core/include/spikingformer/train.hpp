#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "spikingformer/dataset.hpp"
#include "spikingformer/model.hpp"

SPKF_NAMESPACE_BEGIN

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  double lr = 5e-4;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  NeuronMode mode = NeuronMode::kSpiking;
  /// Stop after the first epoch whose train accuracy reaches this value.
  std::optional<double> stop_at_accuracy;

  void validate() const;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  std::size_t step = 0;  // optimizer steps taken so far
  double loss = 0.0;     // mean over the epoch
  double accuracy = 0.0;
  double lr = 0.0;       // rate used by the epoch's last step
};

struct TrainResult {
  std::vector<EpochMetrics> log;
  double final_accuracy() const { return log.empty() ? 0.0 : log.back().accuracy; }
};

/// Cosine decay from base_lr at step 0 to 0 at total_steps.
double cosine_lr(double base_lr, std::size_t step, std::size_t total_steps);

/// AdamW with decoupled weight decay over a fixed parameter list.
class AdamW {
 public:
  AdamW(std::vector<NamedTensor> params, double beta1, double beta2, double eps,
        double weight_decay);

  void step(double lr);
  void zero_grad();
  std::size_t steps() const { return t_; }

 private:
  std::vector<NamedTensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double beta1_, beta2_, eps_, weight_decay_;
  std::size_t t_ = 0;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Surrogate-gradient BPTT training with cross-entropy on the logits.
TrainResult train(Model& model, const Dataset& dataset, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

/// One optimizer-free forward/backward; returns the loss. Gradients are left
/// on the model parameters.
double loss_and_gradients(Model& model, const Batch& batch, NeuronMode mode, bool training);

struct EvalResult {
  double accuracy = 0.0;
  double loss = 0.0;
  std::size_t samples = 0;
  std::vector<std::vector<Real>> logits;
};

EvalResult evaluate(Model& model, const Dataset& dataset, std::size_t batch_size = 32,
                    bool keep_logits = false);

std::string metrics_csv(const std::vector<EpochMetrics>& log);

SPKF_NAMESPACE_END
