#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "spikingformer/tensor.hpp"

SPKF_NAMESPACE_BEGIN

/// Records differentiable ops in execution order and replays their backward
/// closures in exact reverse order. Only tensors that require grad (directly
/// or through an input) are tracked.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::uint64_t id() const { return id_; }
  std::size_t size() const { return nodes_.size(); }

  /// Marks `output` as produced on this tape and stores its backward closure.
  void record(const Tensor& output, BackwardFn backward);

  /// Seeds d(loss)/d(loss)=1 and propagates to every tracked tensor. The
  /// gradients of leaf parameters are then available through Tensor::grad().
  void backward(const Tensor& loss);

  void clear();

 private:
  struct Node {
    std::shared_ptr<TensorStorage> output;
    BackwardFn backward;
  };

  std::uint64_t id_;
  std::vector<Node> nodes_;
};

/// The tape that ops record onto in the current thread (nullptr: no recording).
Tape* active_tape();

/// RAII activation of a tape for the current thread.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// RAII suspension of recording (e.g. evaluation inside a training step).
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

/// True when an op on these inputs must be recorded.
bool needs_grad(std::initializer_list<const Tensor*> inputs);

SPKF_NAMESPACE_END
