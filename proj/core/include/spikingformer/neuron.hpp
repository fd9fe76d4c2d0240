#pragma once

#include <cstddef>

#include "spikingformer/tensor.hpp"

SPKF_NAMESPACE_BEGIN

/// Leaky integrate-and-fire constants. tau is in time steps.
struct LifParams {
  Real tau = Real(2.0);
  Real v_threshold = Real(1.0);
  Real v_reset = Real(0.0);
  Real alpha = Real(4.0);  // sigmoid surrogate sharpness
  /// Treat the reset term's dependence on the spike as constant in backward.
  bool detach_reset = true;

  void validate() const;
};

enum class NeuronMode {
  kSpiking,  // Heaviside forward, sigmoid-surrogate backward
  kRelaxed,  // sigmoid forward with its exact derivative; for gradient checks
};

/// A tensor whose elements are all exactly 0 or 1.
class SpikeTensor {
 public:
  SpikeTensor() = default;
  /// Throws std::invalid_argument if any element is not 0 or 1.
  static SpikeTensor checked(Tensor values);

  const Tensor& tensor() const { return values_; }
  const Shape& shape() const { return values_.shape(); }
  std::size_t numel() const { return values_.numel(); }
  std::size_t count_ones() const;

 private:
  explicit SpikeTensor(Tensor values) : values_(std::move(values)) {}
  friend SpikeTensor heaviside(const Tensor& v);
  Tensor values_;
};

bool is_binary(const Tensor& t);

/// Theta(v) with Theta(0) = 1.
SpikeTensor heaviside(const Tensor& v);

/// d/dv sigmoid(alpha v) = alpha s (1 - s), s = sigmoid(alpha v).
Real surrogate_grad(Real v, Real alpha);
Tensor surrogate_grad(const Tensor& v, Real alpha);

struct MembraneState {
  Tensor v;

  static MembraneState at_reset(const Shape& shape, const LifParams& params);
};

struct LifStepResult {
  SpikeTensor spikes;
  MembraneState state;
  Tensor charge;  // H[t]
};

/// One step of the charge/fire/reset dynamics:
///   H = V + (X - (V - V_reset)) / tau
///   S = Theta(H - V_th)
///   V' = H (1 - S) + V_reset S
LifStepResult lif_step(const MembraneState& state, const Tensor& input, const LifParams& params);

/// Multistep LIF over x[T*B, ...] (time-major). State starts at V_reset.
/// `input_scale` multiplies every input before charging (used to fold the
/// attention scale into the neuron). Differentiable: records BPTT backward.
/// alpha = 0 is accepted here and blocks every gradient through the neuron.
Tensor multistep_lif(const Tensor& x, std::size_t timesteps, const LifParams& params,
                     NeuronMode mode = NeuronMode::kSpiking, Real input_scale = Real(1));

SPKF_NAMESPACE_END
