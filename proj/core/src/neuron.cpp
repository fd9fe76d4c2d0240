#include "spikingformer/neuron.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "spikingformer/autodiff.hpp"

SPKF_NAMESPACE_BEGIN

void LifParams::validate() const {
  if (!(tau >= Real(1))) throw std::invalid_argument("LIF: tau must be >= 1, got " + std::to_string(tau));
  if (!(v_threshold > v_reset)) throw std::invalid_argument("LIF: threshold must exceed reset potential");
  if (!(alpha > Real(0))) throw std::invalid_argument("LIF: surrogate alpha must be > 0");
}

bool is_binary(const Tensor& t) {
  for (Real v : t.data())
    if (v != Real(0) && v != Real(1)) return false;
  return true;
}

SpikeTensor SpikeTensor::checked(Tensor values) {
  if (!is_binary(values)) throw std::invalid_argument("SpikeTensor: value outside {0,1}");
  return SpikeTensor(std::move(values));
}

std::size_t SpikeTensor::count_ones() const {
  std::size_t n = 0;
  for (Real v : values_.data()) n += v != Real(0);
  return n;
}

SpikeTensor heaviside(const Tensor& v) {
  std::vector<Real> out(v.numel());
  const auto in = v.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] >= Real(0) ? Real(1) : Real(0);
  return SpikeTensor(Tensor(v.shape(), std::move(out)));
}

namespace {

inline Real sigmoid(Real x) { return Real(1) / (Real(1) + std::exp(-x)); }

}  // namespace

Real surrogate_grad(Real v, Real alpha) {
  // alpha s (1 - s) written in terms of e^{-|alpha v|}: exactly even, no cancellation.
  const Real e = std::exp(-std::abs(alpha * v));
  const Real d = Real(1) + e;
  return alpha * e / (d * d);
}

Tensor surrogate_grad(const Tensor& v, Real alpha) {
  if (!(alpha > Real(0))) throw std::invalid_argument("surrogate_grad: alpha must be > 0");
  std::vector<Real> out(v.numel());
  const auto in = v.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = surrogate_grad(in[i], alpha);
  return Tensor(v.shape(), std::move(out));
}

MembraneState MembraneState::at_reset(const Shape& shape, const LifParams& params) {
  return {Tensor::full(shape, params.v_reset)};
}

LifStepResult lif_step(const MembraneState& state, const Tensor& input, const LifParams& params) {
  require_same_shape(state.v, input, "lif_step");
  const std::size_t n = input.numel();
  std::vector<Real> h(n), s(n), v_next(n);
  const auto v = state.v.data();
  const auto x = input.data();
  for (std::size_t i = 0; i < n; ++i) {
    h[i] = v[i] + (x[i] - (v[i] - params.v_reset)) / params.tau;
    s[i] = h[i] - params.v_threshold >= Real(0) ? Real(1) : Real(0);
    v_next[i] = h[i] * (Real(1) - s[i]) + params.v_reset * s[i];
  }
  LifStepResult result;
  result.spikes = SpikeTensor::checked(Tensor(input.shape(), std::move(s)));
  result.state.v = Tensor(input.shape(), std::move(v_next));
  result.charge = Tensor(input.shape(), std::move(h));
  return result;
}

Tensor multistep_lif(const Tensor& x, std::size_t timesteps, const LifParams& params, NeuronMode mode,
                     Real input_scale) {
  if (timesteps == 0) throw std::invalid_argument("multistep_lif: T must be >= 1");
  if (x.rank() == 0 || x.dim(0) % timesteps != 0) {
    throw ShapeError("multistep_lif: leading axis of " + shape_to_string(x.shape()) +
                     " is not a multiple of T=" + std::to_string(timesteps));
  }
  if (params.alpha == Real(0)) {
    LifParams checked = params;
    checked.alpha = Real(1);
    checked.validate();
  } else {
    params.validate();
  }
  const std::size_t sites = x.numel() / timesteps;
  const bool relaxed = mode == NeuronMode::kRelaxed;
  std::vector<Real> charge(x.numel()), spikes(x.numel());
  std::vector<Real> v(sites, params.v_reset);
  const auto in = x.data();
  const Real inv_tau = Real(1) / params.tau;
  for (std::size_t t = 0; t < timesteps; ++t) {
    const std::size_t off = t * sites;
    for (std::size_t i = 0; i < sites; ++i) {
      const Real h = v[i] + (input_scale * in[off + i] - (v[i] - params.v_reset)) * inv_tau;
      const Real s = relaxed ? sigmoid(params.alpha * (h - params.v_threshold))
                             : (h - params.v_threshold >= Real(0) ? Real(1) : Real(0));
      charge[off + i] = h;
      spikes[off + i] = s;
      v[i] = h * (Real(1) - s) + params.v_reset * s;
    }
  }
  Tensor result(x.shape(), spikes);
  if (needs_grad({&x})) {
    auto xs = x.storage();
    auto os = result.storage();
    active_tape()->record(result, [xs, os, charge = std::move(charge), spikes = std::move(spikes),
                                   timesteps, sites, params, relaxed, input_scale, inv_tau] {
      auto& gx = xs->ensure_grad();
      const auto& gout = os->grad;
      const bool full_reset = relaxed || !params.detach_reset;
      std::vector<Real> gv(sites, Real(0));
      for (std::size_t t = timesteps; t-- > 0;) {
        const std::size_t off = t * sites;
        for (std::size_t i = 0; i < sites; ++i) {
          const Real h = charge[off + i];
          const Real s = spikes[off + i];
          const Real ds = surrogate_grad(h - params.v_threshold, params.alpha);
          Real gs = gout[off + i];
          if (full_reset) gs += gv[i] * (params.v_reset - h);
          const Real gh = gs * ds + gv[i] * (Real(1) - s);
          gx[off + i] += gh * inv_tau * input_scale;
          gv[i] = gh * (Real(1) - inv_tau);
        }
      }
    });
  }
  return result;
}

SPKF_NAMESPACE_END
