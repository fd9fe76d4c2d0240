#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "spikingformer/tensor.hpp"

SPKF_NAMESPACE_BEGIN

// Differentiable dense primitives. Every op records itself on the active tape
// when one of its inputs requires grad. Time steps are folded into the batch
// axis (index t * B + b) for all of them.

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Real factor);
Tensor sum(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

/// [M,K] x [K,N] -> [M,N]
Tensor matmul(const Tensor& a, const Tensor& b);

/// x[B,in] W[out,in] b[out] -> [B,out]
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor* bias = nullptr);

/// Cross-correlation: x[B,C,H,W], kernel[O,C,kh,kw] -> [B,O,H',W'],
/// H' = (H + 2*padding - kh) / stride + 1.
Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor* bias, std::size_t stride,
              std::size_t padding);

struct BatchNormOptions {
  Real eps = Real(1e-5);
  Real momentum = Real(0.1);
  bool training = false;
};

/// Per-channel normalization over axis 1. In training mode batch statistics
/// are used and the running statistics (mutated in place, never tracked) move
/// by `momentum` toward them; running variance uses the unbiased estimate.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                  Tensor& running_var, const BatchNormOptions& options);

/// 2x2 window, stride 2, floor on odd sizes.
Tensor max_pool2d(const Tensor& x);

/// [B,C,H,W] -> [B,C], mean over the spatial (token) axes.
Tensor global_avg_pool(const Tensor& x);

/// [T*B, ...] -> [B, ...], mean over the leading time groups.
Tensor time_mean(const Tensor& x, std::size_t timesteps);

/// [B, ...] -> [T*B, ...], the input repeated at every time step.
Tensor repeat_time(const Tensor& x, std::size_t timesteps);

/// Mean softmax cross-entropy of logits[B,C] against integer labels.
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);

/// Attention core without softmax. Inputs are [B,D,H,W] token maps with
/// N = H*W tokens; channels split into `heads` slices of width D/heads and each
/// head computes q k^T v on its [N,d] views. Result has the input shape and is
/// not scaled.
Tensor attention_core(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads);

// Plain GEMM kernels used by the ops (row-major, C += ...).
namespace kernels {
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b, Real* c);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b, Real* c);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b, Real* c);
}  // namespace kernels

SPKF_NAMESPACE_END
