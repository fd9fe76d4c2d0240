#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include <spikingformer/layers.hpp>
#include <spikingformer/tensor.hpp>

namespace spkf::testing {

inline Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<Real> v(shape_numel(shape));
  for (auto& x : v) x = Real(rng.uniform(lo, hi));
  return Tensor(std::move(shape), std::move(v));
}

inline Tensor random_binary(Rng& rng, Shape shape, double p = 0.5) {
  std::vector<Real> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform() < p ? Real(1) : Real(0);
  return Tensor(std::move(shape), std::move(v));
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

inline void fill(Tensor& t, Real value) {
  for (auto& x : t.mutable_data()) x = value;
}

inline void randomize(Tensor& t, Rng& rng, double lo, double hi) {
  for (auto& x : t.mutable_data()) x = Real(rng.uniform(lo, hi));
}

// Direct six-loop cross-correlation, accumulated in double.
inline std::vector<double> naive_conv2d(const Tensor& x, const Tensor& k, const Tensor* bias, std::size_t stride,
                                        std::size_t pad) {
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const std::size_t oh = (H + 2 * pad - kh) / stride + 1, ow = (W + 2 * pad - kw) / stride + 1;
  std::vector<double> out(B * O * oh * ow, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double acc = bias ? double((*bias)[o]) : 0.0;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t u = 0; u < kh; ++u)
              for (std::size_t v = 0; v < kw; ++v) {
                const long r = long(i * stride + u) - long(pad), s = long(j * stride + v) - long(pad);
                if (r < 0 || s < 0 || r >= long(H) || s >= long(W)) continue;
                acc += double(x[((b * C + c) * H + r) * W + s]) * double(k[((o * C + c) * kh + u) * kw + v]);
              }
          out[((b * O + o) * oh + i) * ow + j] = acc;
        }
  return out;
}

}  // namespace spkf::testing

#include <spikingformer/model.hpp>

namespace spkf::testing {

inline ForwardContext eval_context(std::size_t timesteps, ActivityRecorder* recorder = nullptr) {
  ForwardContext ctx;
  ctx.timesteps = timesteps;
  ctx.recorder = recorder;
  return ctx;
}

inline void randomize_batch_norm(BatchNorm2d& bn, Rng& rng) {
  randomize(bn.gamma, rng, 0.5, 2.5);
  randomize(bn.beta, rng, -0.5, 1.5);
  randomize(bn.running_mean, rng, -0.5, 0.5);
  randomize(bn.running_var, rng, 0.3, 1.5);
}

// Eval-mode BN parameters that keep a fresh model's neurons active.
inline void randomize_batch_norm(Model& model, Rng& rng) {
  for (ConvBN* layer : model.convbn_layers())
    if (layer->bn) randomize_batch_norm(*layer->bn, rng);
}

// [N,D] row-major token matrix -> [1,D,1,N] token map.
inline Tensor token_map(std::size_t n, std::size_t d, const std::vector<Real>& rows) {
  std::vector<Real> v(n * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) v[j * n + i] = rows[i * d + j];
  return Tensor({1, d, 1, n}, std::move(v));
}

// Entry (token i, channel j) of a [1,D,1,N] token map.
inline Real token_at(const Tensor& t, std::size_t i, std::size_t j) { return t[j * t.dim(3) + i]; }

}  // namespace spkf::testing
