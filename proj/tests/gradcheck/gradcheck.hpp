#pragma once

// Central finite differences against tape gradients. Meant for f64 builds.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <spikingformer/autodiff.hpp>
#include <spikingformer/tensor.hpp>

namespace spkf::gradcheck {

struct Leaf {
  std::string name;
  Tensor tensor;
};

struct LeafError {
  std::string name;
  std::size_t numel = 0;
  double max_rel = 0.0;
  double max_abs = 0.0;
  double grad_norm = 0.0;
};

// |a - b| / max(|a|, |b|, floor)
inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// `loss` builds the scalar loss from the current leaf values; it is run once
/// on a tape for the analytic gradient and twice per scalar without one.
inline std::vector<LeafError> check(std::vector<Leaf> leaves, const std::function<Tensor()>& loss, double h,
                                    double floor) {
  for (auto& l : leaves) {
    l.tensor.set_requires_grad(true);
    l.tensor.zero_grad();
  }
  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(loss());
  }
  std::vector<LeafError> out;
  for (auto& l : leaves) {
    const Tensor g = l.tensor.has_grad() ? l.tensor.grad() : Tensor::zeros(l.tensor.shape());
    LeafError e{l.name, l.tensor.numel(), 0.0, 0.0, 0.0};
    for (std::size_t i = 0; i < l.tensor.numel(); ++i) {
      auto data = l.tensor.mutable_data();
      const Real saved = data[i];
      double plus = 0, minus = 0;
      {
        NoGradScope ng;
        data[i] = saved + Real(h);
        plus = double(loss()[0]);
        data[i] = saved - Real(h);
        minus = double(loss()[0]);
      }
      data[i] = saved;
      const double numeric = (plus - minus) / (2 * h);
      const double analytic = double(g[i]);
      e.max_abs = std::max(e.max_abs, std::abs(analytic - numeric));
      e.max_rel = std::max(e.max_rel, relative_error(analytic, numeric, floor));
      e.grad_norm += analytic * analytic;
    }
    e.grad_norm = std::sqrt(e.grad_norm);
    out.push_back(e);
  }
  return out;
}

inline double worst(const std::vector<LeafError>& errors) {
  double w = 0;
  for (const auto& e : errors) w = std::max(w, e.max_rel);
  return w;
}

}  // namespace spkf::gradcheck
