#include "spikingformer/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "spikingformer/autodiff.hpp"
#include "spikingformer/parallel.hpp"

SPKF_NAMESPACE_BEGIN

namespace kernels {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b, Real* c) {
  for (std::size_t i = 0; i < m; ++i) {
    Real* ci = c + i * n;
    const Real* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const Real av = ai[p];
      if (av == Real{0}) continue;
      const Real* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b, Real* c) {
  // a is [k, m]
  for (std::size_t p = 0; p < k; ++p) {
    const Real* ap = a + p * m;
    const Real* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const Real av = ap[i];
      if (av == Real{0}) continue;
      Real* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b, Real* c) {
  // b is [n, k]; transpose once so the inner loop runs contiguously.
  std::vector<Real> bt(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  gemm_nn(m, n, k, a, bt.data(), c);
}

}  // namespace kernels

namespace {

using StoragePtr = std::shared_ptr<TensorStorage>;

void accumulate(const StoragePtr& target, const std::vector<Real>& g) {
  if (!target->requires_grad) return;
  auto& dst = target->ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<Real> out(a.numel());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  Tensor result(a.shape(), std::move(out));
  if (needs_grad({&a, &b})) {
    StoragePtr as = a.storage(), bs = b.storage(), os = result.storage();
    active_tape()->record(result, [as, bs, os] {
      accumulate(as, os->grad);
      accumulate(bs, os->grad);
    });
  }
  return result;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<Real> out(a.numel());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  Tensor result(a.shape(), std::move(out));
  if (needs_grad({&a, &b})) {
    StoragePtr as = a.storage(), bs = b.storage(), os = result.storage();
    active_tape()->record(result, [as, bs, os] {
      const auto& g = os->grad;
      if (as->requires_grad) {
        auto& ga = as->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bs->data[i];
      }
      if (bs->requires_grad) {
        auto& gb = bs->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * as->data[i];
      }
    });
  }
  return result;
}

Tensor scale(const Tensor& a, Real factor) {
  std::vector<Real> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  Tensor result(a.shape(), std::move(out));
  if (needs_grad({&a})) {
    StoragePtr as = a.storage(), os = result.storage();
    active_tape()->record(result, [as, os, factor] {
      auto& ga = as->ensure_grad();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += factor * os->grad[i];
    });
  }
  return result;
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (Real v : a.data()) acc += v;
  Tensor result = Tensor::scalar(static_cast<Real>(acc));
  if (needs_grad({&a})) {
    StoragePtr as = a.storage(), os = result.storage();
    active_tape()->record(result, [as, os] {
      auto& ga = as->ensure_grad();
      const Real g = os->grad[0];
      for (auto& v : ga) v += g;
    });
  }
  return result;
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_to_string(a.shape()) + " as " +
                     shape_to_string(shape));
  }
  Tensor result(std::move(shape), std::vector<Real>(a.data().begin(), a.data().end()));
  if (needs_grad({&a})) {
    StoragePtr as = a.storage(), os = result.storage();
    active_tape()->record(result, [as, os] { accumulate(as, os->grad); });
  }
  return result;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_to_string(a.shape()) + " x " +
                     shape_to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor result(Shape{m, n});
  kernels::gemm_nn(m, n, k, a.data().data(), b.data().data(), result.mutable_data().data());
  if (needs_grad({&a, &b})) {
    StoragePtr as = a.storage(), bs = b.storage(), os = result.storage();
    active_tape()->record(result, [as, bs, os, m, n, k] {
      if (as->requires_grad)
        kernels::gemm_nt(m, k, n, os->grad.data(), bs->data.data(), as->ensure_grad().data());
      if (bs->requires_grad)
        kernels::gemm_tn(k, n, m, as->data.data(), os->grad.data(), bs->ensure_grad().data());
    });
  }
  return result;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor* bias) {
  if (x.rank() != 2 || weight.rank() != 2 || x.dim(1) != weight.dim(1)) {
    throw ShapeError("linear: input " + shape_to_string(x.shape()) + " does not match weight " +
                     shape_to_string(weight.shape()));
  }
  const std::size_t batch = x.dim(0), in = x.dim(1), out = weight.dim(0);
  if (bias != nullptr && (bias->rank() != 1 || bias->dim(0) != out)) {
    throw ShapeError("linear: bias " + shape_to_string(bias->shape()) + " for " +
                     std::to_string(out) + " outputs");
  }
  Tensor result(Shape{batch, out});
  auto y = result.mutable_data();
  if (bias != nullptr) {
    for (std::size_t i = 0; i < batch; ++i)
      for (std::size_t j = 0; j < out; ++j) y[i * out + j] = bias->data()[j];
  }
  kernels::gemm_nt(batch, out, in, x.data().data(), weight.data().data(), y.data());
  if (needs_grad({&x, &weight, bias})) {
    StoragePtr xs = x.storage(), ws = weight.storage(), os = result.storage();
    StoragePtr bs = bias != nullptr ? bias->storage() : nullptr;
    active_tape()->record(result, [xs, ws, bs, os, batch, in, out] {
      const Real* g = os->grad.data();
      if (xs->requires_grad) kernels::gemm_nn(batch, in, out, g, ws->data.data(), xs->ensure_grad().data());
      if (ws->requires_grad) kernels::gemm_tn(out, in, batch, g, xs->data.data(), ws->ensure_grad().data());
      if (bs && bs->requires_grad) {
        auto& gb = bs->ensure_grad();
        for (std::size_t i = 0; i < batch; ++i)
          for (std::size_t j = 0; j < out; ++j) gb[j] += g[i * out + j];
      }
    });
  }
  return result;
}

namespace {

struct ConvGeometry {
  std::size_t batch, channels, height, width;
  std::size_t out_channels, kh, kw;
  std::size_t stride, padding;
  std::size_t out_h, out_w;

  std::size_t patch() const { return channels * kh * kw; }
  std::size_t out_pixels() const { return out_h * out_w; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && padding == 0; }
};

void im2col(const ConvGeometry& g, const Real* x, Real* cols) {
  const std::size_t pixels = g.out_pixels();
  for (std::size_t c = 0; c < g.channels; ++c) {
    const Real* plane = x + c * g.height * g.width;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        Real* row = cols + ((c * g.kh + i) * g.kw + j) * pixels;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.padding);
          Real* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<long>(g.height)) {
            std::fill(dst, dst + g.out_w, Real{0});
            continue;
          }
          const Real* src = plane + static_cast<std::size_t>(iy) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + j) - static_cast<long>(g.padding);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.width)) ? Real{0}
                                                                    : src[static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
}

void col2im(const ConvGeometry& g, const Real* cols, Real* dx) {
  const std::size_t pixels = g.out_pixels();
  for (std::size_t c = 0; c < g.channels; ++c) {
    Real* plane = dx + c * g.height * g.width;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const Real* row = cols + ((c * g.kh + i) * g.kw + j) * pixels;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.padding);
          if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
          Real* dst = plane + static_cast<std::size_t>(iy) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + j) - static_cast<long>(g.padding);
            if (ix >= 0 && ix < static_cast<long>(g.width))
              dst[static_cast<std::size_t>(ix)] += row[oy * g.out_w + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor* bias, std::size_t stride,
              std::size_t padding) {
  if (x.rank() != 4 || kernel.rank() != 4) {
    throw ShapeError("conv2d: expected rank-4 input and kernel, got " + shape_to_string(x.shape()) +
                     " and " + shape_to_string(kernel.shape()));
  }
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), kernel.dim(0), kernel.dim(2),
                 kernel.dim(3), stride, padding, 0, 0};
  if (kernel.dim(1) != g.channels) {
    throw ShapeError("conv2d: input has " + std::to_string(g.channels) + " channels, kernel expects " +
                     std::to_string(kernel.dim(1)));
  }
  if (g.kh > g.height + 2 * padding || g.kw > g.width + 2 * padding) {
    throw ShapeError("conv2d: kernel " + shape_to_string(kernel.shape()) + " larger than padded input " +
                     shape_to_string(x.shape()));
  }
  if (bias != nullptr && (bias->rank() != 1 || bias->dim(0) != g.out_channels)) {
    throw ShapeError("conv2d: bias " + shape_to_string(bias->shape()) + " for " +
                     std::to_string(g.out_channels) + " output channels");
  }
  g.out_h = (g.height + 2 * padding - g.kh) / stride + 1;
  g.out_w = (g.width + 2 * padding - g.kw) / stride + 1;

  Tensor result(Shape{g.batch, g.out_channels, g.out_h, g.out_w});
  const Real* xin = x.data().data();
  const Real* w = kernel.data().data();
  const Real* bvals = bias != nullptr ? bias->data().data() : nullptr;
  Real* y = result.mutable_data().data();
  const std::size_t in_stride = g.channels * g.height * g.width;
  const std::size_t out_stride = g.out_channels * g.out_pixels();

  parallel_for(0, g.batch, [&](std::size_t b) {
    Real* yb = y + b * out_stride;
    if (bvals != nullptr) {
      for (std::size_t o = 0; o < g.out_channels; ++o)
        std::fill(yb + o * g.out_pixels(), yb + (o + 1) * g.out_pixels(), bvals[o]);
    }
    if (g.pointwise()) {
      kernels::gemm_nn(g.out_channels, g.out_pixels(), g.channels, w, xin + b * in_stride, yb);
    } else {
      std::vector<Real> cols(g.patch() * g.out_pixels());
      im2col(g, xin + b * in_stride, cols.data());
      kernels::gemm_nn(g.out_channels, g.out_pixels(), g.patch(), w, cols.data(), yb);
    }
  });

  if (needs_grad({&x, &kernel, bias})) {
    StoragePtr xs = x.storage(), ws = kernel.storage(), os = result.storage();
    StoragePtr bs = bias != nullptr ? bias->storage() : nullptr;
    active_tape()->record(result, [xs, ws, bs, os, g, in_stride, out_stride] {
      const Real* gy = os->grad.data();
      if (xs->requires_grad) {
        Real* dx = xs->ensure_grad().data();
        parallel_for(0, g.batch, [&](std::size_t b) {
          const Real* gyb = gy + b * out_stride;
          if (g.pointwise()) {
            kernels::gemm_tn(g.channels, g.out_pixels(), g.out_channels, ws->data.data(), gyb,
                             dx + b * in_stride);
          } else {
            std::vector<Real> dcols(g.patch() * g.out_pixels(), Real{0});
            kernels::gemm_tn(g.patch(), g.out_pixels(), g.out_channels, ws->data.data(), gyb,
                             dcols.data());
            col2im(g, dcols.data(), dx + b * in_stride);
          }
        });
      }
      if (ws->requires_grad) {
        Real* dw = ws->ensure_grad().data();
        std::vector<Real> cols;
        for (std::size_t b = 0; b < g.batch; ++b) {
          const Real* gyb = gy + b * out_stride;
          const Real* colsb = xs->data.data() + b * in_stride;
          if (!g.pointwise()) {
            cols.resize(g.patch() * g.out_pixels());
            im2col(g, colsb, cols.data());
            colsb = cols.data();
          }
          kernels::gemm_nt(g.out_channels, g.patch(), g.out_pixels(), gyb, colsb, dw);
        }
      }
      if (bs && bs->requires_grad) {
        auto& gb = bs->ensure_grad();
        for (std::size_t b = 0; b < g.batch; ++b)
          for (std::size_t o = 0; o < g.out_channels; ++o) {
            const Real* row = gy + b * out_stride + o * g.out_pixels();
            Real acc = 0;
            for (std::size_t p = 0; p < g.out_pixels(); ++p) acc += row[p];
            gb[o] += acc;
          }
      }
    });
  }
  return result;
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                  Tensor& running_var, const BatchNormOptions& options) {
  if (x.rank() < 2) throw ShapeError("batch_norm: input needs a channel axis, got " + shape_to_string(x.shape()));
  const std::size_t batch = x.dim(0), channels = x.dim(1);
  const std::size_t inner = x.numel() / (batch * channels);
  for (const Tensor* p : {&gamma, &beta, static_cast<const Tensor*>(&running_mean),
                          static_cast<const Tensor*>(&running_var)}) {
    if (p->numel() != channels) {
      throw ShapeError("batch_norm: parameter of size " + std::to_string(p->numel()) + " for " +
                       std::to_string(channels) + " channels");
    }
  }
  const std::size_t count = batch * inner;
  std::vector<Real> mean(channels), inv_std(channels);
  const auto xv = x.data();

  if (options.training) {
    auto rm = running_mean.mutable_data();
    auto rv = running_var.mutable_data();
    for (std::size_t c = 0; c < channels; ++c) {
      double s = 0.0, ss = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const Real* p = xv.data() + (b * channels + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) s += p[i];
      }
      const double mu = s / double(count);
      for (std::size_t b = 0; b < batch; ++b) {
        const Real* p = xv.data() + (b * channels + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) {
          const double d = p[i] - mu;
          ss += d * d;
        }
      }
      const double var = ss / double(count);
      mean[c] = static_cast<Real>(mu);
      inv_std[c] = static_cast<Real>(1.0 / std::sqrt(var + options.eps));
      const double unbiased = count > 1 ? ss / double(count - 1) : var;
      rm[c] = static_cast<Real>((1.0 - options.momentum) * rm[c] + options.momentum * mu);
      rv[c] = static_cast<Real>((1.0 - options.momentum) * rv[c] + options.momentum * unbiased);
    }
  } else {
    const auto rm = running_mean.data();
    const auto rv = running_var.data();
    for (std::size_t c = 0; c < channels; ++c) {
      const double denom = double(rv[c]) + options.eps;
      if (!(denom > 0.0)) {
        throw std::invalid_argument("batch_norm: running variance + eps must be positive (channel " +
                                    std::to_string(c) + ")");
      }
      mean[c] = rm[c];
      inv_std[c] = static_cast<Real>(1.0 / std::sqrt(denom));
    }
  }

  Tensor result(x.shape());
  auto y = result.mutable_data();
  const auto gv = gamma.data();
  const auto bv = beta.data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t off = (b * channels + c) * inner;
      for (std::size_t i = 0; i < inner; ++i)
        y[off + i] = gv[c] * (xv[off + i] - mean[c]) * inv_std[c] + bv[c];
    }

  if (needs_grad({&x, &gamma, &beta})) {
    StoragePtr xs = x.storage(), gs = gamma.storage(), bs = beta.storage(), os = result.storage();
    const bool training = options.training;
    active_tape()->record(result, [xs, gs, bs, os, mean, inv_std, batch, channels, inner, count, training] {
      const auto& gy = os->grad;
      const auto& xd = xs->data;
      std::vector<double> sum_dy(channels, 0.0), sum_dy_xhat(channels, 0.0);
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t c = 0; c < channels; ++c) {
          const std::size_t off = (b * channels + c) * inner;
          for (std::size_t i = 0; i < inner; ++i) {
            const double xhat = (xd[off + i] - mean[c]) * inv_std[c];
            sum_dy[c] += gy[off + i];
            sum_dy_xhat[c] += gy[off + i] * xhat;
          }
        }
      if (gs->requires_grad) {
        auto& gg = gs->ensure_grad();
        for (std::size_t c = 0; c < channels; ++c) gg[c] += static_cast<Real>(sum_dy_xhat[c]);
      }
      if (bs->requires_grad) {
        auto& gb = bs->ensure_grad();
        for (std::size_t c = 0; c < channels; ++c) gb[c] += static_cast<Real>(sum_dy[c]);
      }
      if (xs->requires_grad) {
        auto& gx = xs->ensure_grad();
        const auto& gam = gs->data;
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t off = (b * channels + c) * inner;
            const double k = double(gam[c]) * inv_std[c];
            for (std::size_t i = 0; i < inner; ++i) {
              if (training) {
                const double xhat = (xd[off + i] - mean[c]) * inv_std[c];
                const double m = double(count);
                gx[off + i] += static_cast<Real>(k * (gy[off + i] - sum_dy[c] / m - xhat * sum_dy_xhat[c] / m));
              } else {
                gx[off + i] += static_cast<Real>(k * gy[off + i]);
              }
            }
          }
      }
    });
  }
  return result;
}

Tensor max_pool2d(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("max_pool2d: expected [B,C,H,W], got " + shape_to_string(x.shape()));
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h < 2 || w < 2) throw ShapeError("max_pool2d: spatial dims must be >= 2, got " + shape_to_string(x.shape()));
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor result(Shape{x.dim(0), x.dim(1), oh, ow});
  std::vector<std::size_t> argmax(result.numel());
  const auto xv = x.data();
  auto y = result.mutable_data();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = p * h * w + (2 * oy) * w + 2 * ox;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = p * h * w + (2 * oy + dy) * w + (2 * ox + dx);
            if (xv[idx] > xv[best]) best = idx;
          }
        const std::size_t o = (p * oh + oy) * ow + ox;
        y[o] = xv[best];
        argmax[o] = best;
      }
  if (needs_grad({&x})) {
    StoragePtr xs = x.storage(), os = result.storage();
    active_tape()->record(result, [xs, os, argmax = std::move(argmax)] {
      auto& gx = xs->ensure_grad();
      for (std::size_t o = 0; o < argmax.size(); ++o) gx[argmax[o]] += os->grad[o];
    });
  }
  return result;
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("global_avg_pool: expected [B,C,H,W], got " + shape_to_string(x.shape()));
  const std::size_t rows = x.dim(0) * x.dim(1), inner = x.dim(2) * x.dim(3);
  Tensor result(Shape{x.dim(0), x.dim(1)});
  auto y = result.mutable_data();
  const auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t i = 0; i < inner; ++i) acc += xv[r * inner + i];
    y[r] = static_cast<Real>(acc / double(inner));
  }
  if (needs_grad({&x})) {
    StoragePtr xs = x.storage(), os = result.storage();
    active_tape()->record(result, [xs, os, rows, inner] {
      auto& gx = xs->ensure_grad();
      const Real inv = Real(1) / Real(inner);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < inner; ++i) gx[r * inner + i] += os->grad[r] * inv;
    });
  }
  return result;
}

Tensor time_mean(const Tensor& x, std::size_t timesteps) {
  if (timesteps == 0 || x.rank() == 0 || x.dim(0) % timesteps != 0) {
    throw ShapeError("time_mean: leading axis of " + shape_to_string(x.shape()) +
                     " is not a multiple of T=" + std::to_string(timesteps));
  }
  Shape shape = x.shape();
  shape[0] /= timesteps;
  const std::size_t per_step = shape_numel(shape);
  Tensor result(shape);
  auto y = result.mutable_data();
  const auto xv = x.data();
  for (std::size_t t = 0; t < timesteps; ++t)
    for (std::size_t i = 0; i < per_step; ++i) y[i] += xv[t * per_step + i];
  for (auto& v : y) v /= Real(timesteps);
  if (needs_grad({&x})) {
    StoragePtr xs = x.storage(), os = result.storage();
    active_tape()->record(result, [xs, os, timesteps, per_step] {
      auto& gx = xs->ensure_grad();
      const Real inv = Real(1) / Real(timesteps);
      for (std::size_t t = 0; t < timesteps; ++t)
        for (std::size_t i = 0; i < per_step; ++i) gx[t * per_step + i] += os->grad[i] * inv;
    });
  }
  return result;
}

Tensor repeat_time(const Tensor& x, std::size_t timesteps) {
  if (timesteps == 0) throw ShapeError("repeat_time: T must be >= 1");
  Shape shape = x.shape();
  shape[0] *= timesteps;
  const std::size_t per_step = x.numel();
  std::vector<Real> out;
  out.reserve(per_step * timesteps);
  for (std::size_t t = 0; t < timesteps; ++t) out.insert(out.end(), x.data().begin(), x.data().end());
  Tensor result(shape, std::move(out));
  if (needs_grad({&x})) {
    StoragePtr xs = x.storage(), os = result.storage();
    active_tape()->record(result, [xs, os, timesteps, per_step] {
      auto& gx = xs->ensure_grad();
      for (std::size_t t = 0; t < timesteps; ++t)
        for (std::size_t i = 0; i < per_step; ++i) gx[i] += os->grad[t * per_step + i];
    });
  }
  return result;
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw ShapeError("cross_entropy: logits " + shape_to_string(logits.shape()) + " for " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  std::vector<Real> probs(batch * classes);
  double total = 0.0;
  const auto z = logits.data();
  for (std::size_t i = 0; i < batch; ++i) {
    if (labels[i] >= classes) throw std::invalid_argument("cross_entropy: label out of range");
    const Real* row = z.data() + i * classes;
    const Real peak = *std::max_element(row, row + classes);
    double denom = 0.0;
    for (std::size_t c = 0; c < classes; ++c) denom += std::exp(double(row[c] - peak));
    for (std::size_t c = 0; c < classes; ++c)
      probs[i * classes + c] = static_cast<Real>(std::exp(double(row[c] - peak)) / denom);
    total += -(double(row[labels[i]] - peak) - std::log(denom));
  }
  Tensor result = Tensor::scalar(static_cast<Real>(total / double(batch)));
  if (needs_grad({&logits})) {
    StoragePtr ls = logits.storage(), os = result.storage();
    std::vector<std::size_t> targets(labels.begin(), labels.end());
    active_tape()->record(result, [ls, os, probs = std::move(probs), targets, batch, classes] {
      auto& g = ls->ensure_grad();
      const Real k = os->grad[0] / Real(batch);
      for (std::size_t i = 0; i < batch; ++i)
        for (std::size_t c = 0; c < classes; ++c) {
          const Real target = c == targets[i] ? Real(1) : Real(0);
          g[i * classes + c] += k * (probs[i * classes + c] - target);
        }
    });
  }
  return result;
}

Tensor attention_core(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads) {
  require_same_shape(q, k, "attention_core");
  require_same_shape(q, v, "attention_core");
  if (q.rank() != 4) throw ShapeError("attention_core: expected [B,D,H,W], got " + shape_to_string(q.shape()));
  const std::size_t batch = q.dim(0), dim = q.dim(1), tokens = q.dim(2) * q.dim(3);
  if (heads == 0 || dim % heads != 0) {
    throw std::invalid_argument("attention_core: dim " + std::to_string(dim) +
                                " is not divisible by heads " + std::to_string(heads));
  }
  const std::size_t d = dim / heads;
  const std::size_t per_sample = dim * tokens;
  Tensor result(q.shape());
  const Real* qd = q.data().data();
  const Real* kd = k.data().data();
  const Real* vd = v.data().data();
  Real* out = result.mutable_data().data();
  parallel_for(0, batch * heads, [&](std::size_t job) {
    const std::size_t b = job / heads, h = job % heads;
    const std::size_t off = b * per_sample + h * d * tokens;
    std::vector<Real> scores(tokens * tokens, Real{0});
    kernels::gemm_tn(tokens, tokens, d, qd + off, kd + off, scores.data());
    kernels::gemm_nt(d, tokens, tokens, vd + off, scores.data(), out + off);
  });
  if (needs_grad({&q, &k, &v})) {
    StoragePtr qs = q.storage(), ks = k.storage(), vs = v.storage(), os = result.storage();
    active_tape()->record(result, [qs, ks, vs, os, batch, heads, d, tokens, per_sample] {
      Real* gq = qs->requires_grad ? qs->ensure_grad().data() : nullptr;
      Real* gk = ks->requires_grad ? ks->ensure_grad().data() : nullptr;
      Real* gv = vs->requires_grad ? vs->ensure_grad().data() : nullptr;
      parallel_for(0, batch * heads, [&](std::size_t job) {
        const std::size_t b = job / heads, h = job % heads;
        const std::size_t off = b * per_sample + h * d * tokens;
        const Real* go = os->grad.data() + off;
        std::vector<Real> scores(tokens * tokens, Real{0});
        kernels::gemm_tn(tokens, tokens, d, qs->data.data() + off, ks->data.data() + off, scores.data());
        if (gv) kernels::gemm_nn(d, tokens, tokens, go, scores.data(), gv + off);
        if (gq || gk) {
          std::vector<Real> dscores(tokens * tokens, Real{0});
          kernels::gemm_tn(tokens, tokens, d, go, vs->data.data() + off, dscores.data());
          if (gq) kernels::gemm_nt(d, tokens, tokens, ks->data.data() + off, dscores.data(), gq + off);
          if (gk) kernels::gemm_nn(d, tokens, tokens, qs->data.data() + off, dscores.data(), gk + off);
        }
      });
    });
  }
  return result;
}

SPKF_NAMESPACE_END
