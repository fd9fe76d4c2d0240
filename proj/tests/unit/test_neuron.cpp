#include <gtest/gtest.h>

#include <cmath>

#include <spikingformer/autodiff.hpp>
#include <spikingformer/neuron.hpp>
#include <spikingformer/ops.hpp>

#include "support.hpp"

using namespace spkf;
using spkf::testing::random_tensor;

namespace {

LifStepResult step_from_rest(Real x) {
  LifParams p;
  return lif_step(MembraneState::at_reset({1}, p), Tensor({1}, {x}), p);
}

}  // namespace

TEST(LifStep, StrongInputFiresAndResets) {
  const auto r = step_from_rest(2.0f);
  EXPECT_EQ(r.charge[0], 1.0f);
  EXPECT_EQ(r.spikes.tensor()[0], 1.0f);
  EXPECT_EQ(r.state.v[0], 0.0f);
}

TEST(LifStep, WeakInputChargesWithoutFiring) {
  const auto r = step_from_rest(0.5f);
  EXPECT_EQ(r.charge[0], 0.25f);
  EXPECT_EQ(r.spikes.tensor()[0], 0.0f);
  EXPECT_EQ(r.state.v[0], 0.25f);
}

TEST(LifStep, ZeroInputIsFixedPoint) {
  const auto r = step_from_rest(0.0f);
  EXPECT_EQ(r.charge[0], 0.0f);
  EXPECT_EQ(r.spikes.tensor()[0], 0.0f);
  EXPECT_EQ(r.state.v[0], 0.0f);
}

TEST(LifStep, ShapeMismatch) {
  LifParams p;
  EXPECT_THROW(lif_step(MembraneState::at_reset({2}, p), Tensor::ones({3}), p), ShapeError);
}

TEST(LifParams, Invariants) {
  LifParams p;
  EXPECT_NO_THROW(p.validate());
  p.tau = Real(0.5);
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p = {};
  p.v_reset = 2;
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p = {};
  p.alpha = 0;
  EXPECT_THROW(p.validate(), std::invalid_argument);
}

TEST(Heaviside, ZeroFires) {
  const auto s = heaviside(Tensor({3}, {0.0f, -0.1f, 5.0f}));
  EXPECT_EQ(s.tensor()[0], 1);
  EXPECT_EQ(s.tensor()[1], 0);
  EXPECT_EQ(s.tensor()[2], 1);
}

TEST(SpikeTensor, CheckedConstructorRejectsNonBinary) {
  EXPECT_NO_THROW(SpikeTensor::checked(Tensor({3}, {0, 1, 1})));
  EXPECT_THROW(SpikeTensor::checked(Tensor({2}, {0, 2})), std::invalid_argument);
  EXPECT_EQ(SpikeTensor::checked(Tensor({3}, {0, 1, 1})).count_ones(), 2u);
}

TEST(Surrogate, PeakAtZero) { EXPECT_FLOAT_EQ(surrogate_grad(0.0f, 4.0f), 1.0f); }

TEST(Surrogate, SaturatesFarFromThreshold) {
  EXPECT_LE(surrogate_grad(10.0f, 4.0f), 1e-8f);
  EXPECT_LE(surrogate_grad(-10.0f, 4.0f), 1e-8f);
}

TEST(Surrogate, EvenFunction) {
  Rng rng(5);
  Tensor v = random_tensor(rng, {200}, -3, 3);
  std::vector<Real> neg(v.numel());
  for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -v[i];
  Tensor a = surrogate_grad(v, 4), b = surrogate_grad(Tensor(v.shape(), neg), 4);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_FLOAT_EQ(a[i], b[i]);
}

TEST(Surrogate, RejectsNonPositiveAlpha) {
  EXPECT_THROW(surrogate_grad(Tensor::ones({1}), 0), std::invalid_argument);
}

TEST(MultistepLif, SingleStepMatchesLifStep) {
  Rng rng(8);
  LifParams p;
  Tensor x = random_tensor(rng, {1 * 10}, -1, 3);
  Tensor s = multistep_lif(x, 1, p);
  const auto r = lif_step(MembraneState::at_reset({10}, p), x, p);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(s[i], r.spikes.tensor()[i]);
}

TEST(MultistepLif, ThresholdTimesTauFiresEveryStep) {
  LifParams p;
  const std::size_t T = 6;
  Tensor s = multistep_lif(Tensor::full({T, 4}, p.v_threshold * p.tau), T, p);
  for (std::size_t i = 0; i < s.numel(); ++i) EXPECT_EQ(s[i], 1.0f);
}

TEST(MultistepLif, ZeroTimestepsRejected) {
  EXPECT_THROW(multistep_lif(Tensor::ones({4}), 0, LifParams{}), std::invalid_argument);
  EXPECT_THROW(multistep_lif(Tensor::ones({5}), 2, LifParams{}), ShapeError);
}

TEST(MultistepLif, StateIsCarriedAcrossSteps) {
  LifParams p;
  Tensor s = multistep_lif(Tensor::full({3, 1}, 1.5f), 3, p);
  // H1 = 0.75, H2 = 0.75 + (1.5 - 0.75) / 2 = 1.125 -> fires, H3 = 0.75
  EXPECT_EQ(s[0], 0);
  EXPECT_EQ(s[1], 1);
  EXPECT_EQ(s[2], 0);
}

TEST(MultistepLif, RelaxedApproachesSpikingAwayFromThreshold) {
  Rng rng(21);
  LifParams sharp;
  sharp.alpha = 100;
  const std::size_t T = 1, n = 500;
  std::vector<Real> x;
  while (x.size() < n) {
    // With V = 0 at the first step, H = X / tau; keep |H - V_th| >= 0.1.
    const Real v = Real(rng.uniform(-2, 6));
    if (std::abs(v / sharp.tau - sharp.v_threshold) >= Real(0.1)) x.push_back(v);
  }
  Tensor in({T * n}, x);
  Tensor hard = multistep_lif(in, T, sharp, NeuronMode::kSpiking);
  Tensor soft = multistep_lif(in, T, sharp, NeuronMode::kRelaxed);
  for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(soft[i], hard[i], 1e-4);
}

TEST(MultistepLif, SpikingOutputIsBinary) {
  Rng rng(1);
  for (int draw = 0; draw < 50; ++draw) {
    Tensor x = random_tensor(rng, {4 * 64}, -3, 5);
    ASSERT_TRUE(is_binary(multistep_lif(x, 4, LifParams{})));
  }
}

// Whenever a site fires, its membrane returns exactly to V_reset.
TEST(LifProperties, ResetIsExact) {
  Rng rng(99);
  for (int draw = 0; draw < 10000; ++draw) {
    LifParams p;
    p.tau = Real(rng.uniform(1, 4));
    p.v_reset = Real(rng.uniform(-1, 0.5));
    p.v_threshold = p.v_reset + Real(rng.uniform(0.1, 2));
    MembraneState state{Tensor({1}, {Real(rng.uniform(-2, 2))})};
    const auto r = lif_step(state, Tensor({1}, {Real(rng.uniform(-4, 8))}), p);
    if (r.spikes.tensor()[0] == 1) {
      ASSERT_EQ(r.state.v[0], p.v_reset);
    } else {
      ASSERT_EQ(r.state.v[0], r.charge[0]);
    }
  }
}

TEST(LifProperties, MonotoneInInput) {
  Rng rng(100);
  for (int draw = 0; draw < 10000; ++draw) {
    LifParams p;
    p.tau = Real(rng.uniform(1, 4));
    MembraneState state{Tensor({1}, {Real(rng.uniform(-1, 1))})};
    const Real x = Real(rng.uniform(-3, 5));
    const Real more = x + Real(rng.uniform(0, 2));
    const Real lo = lif_step(state, Tensor({1}, {x}), p).spikes.tensor()[0];
    const Real hi = lif_step(state, Tensor({1}, {more}), p).spikes.tensor()[0];
    ASSERT_LE(lo, hi);
  }
}

TEST(MultistepLif, BackwardUsesSurrogate) {
  // T = 1 from rest: dS/dX = sg(X / tau - V_th) / tau.
  LifParams p;
  Tensor x = Tensor({3}, {1.0f, 2.0f, 3.0f}).set_requires_grad();
  Tape tape;
  {
    TapeScope scope(tape);
    tape.backward(sum(multistep_lif(x, 1, p)));
  }
  for (std::size_t i = 0; i < 3; ++i)
    EXPECT_NEAR(x.grad()[i], surrogate_grad(x[i] / p.tau - p.v_threshold, p.alpha) / p.tau, 1e-6);
}

TEST(MultistepLif, ZeroAlphaBlocksGradient) {
  LifParams p;
  p.alpha = 0;
  Tensor x = Tensor::full({2, 3}, 1.5f).set_requires_grad();
  Tape tape;
  {
    TapeScope scope(tape);
    tape.backward(sum(multistep_lif(x, 2, p)));
  }
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(x.grad()[i], 0.0f);
}
