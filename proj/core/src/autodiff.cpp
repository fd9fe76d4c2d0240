#include "spikingformer/autodiff.hpp"

#include <atomic>
#include <stdexcept>

SPKF_NAMESPACE_BEGIN

namespace {

std::atomic<std::uint64_t> next_tape_id{1};
thread_local Tape* current_tape = nullptr;

}  // namespace

Tape::Tape() : id_(next_tape_id.fetch_add(1)) {}

void Tape::record(const Tensor& output, BackwardFn backward) {
  output.storage()->requires_grad = true;
  output.storage()->tape_id = id_;
  nodes_.push_back({output.storage(), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar, got shape " +
                                shape_to_string(loss.shape()));
  }
  if (loss.storage()->tape_id != id_) {
    throw std::invalid_argument("backward: loss was not produced on this tape");
  }
  loss.storage()->ensure_grad()[0] = Real{1};
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->output->grad.empty()) continue;  // nothing flowed here
    it->backward();
  }
}

void Tape::clear() { nodes_.clear(); }

Tape* active_tape() { return current_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(current_tape) { current_tape = &tape; }
TapeScope::~TapeScope() { current_tape = previous_; }

NoGradScope::NoGradScope() : previous_(current_tape) { current_tape = nullptr; }
NoGradScope::~NoGradScope() { current_tape = previous_; }

bool needs_grad(std::initializer_list<const Tensor*> inputs) {
  if (current_tape == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t != nullptr && t->requires_grad()) return true;
  }
  return false;
}

SPKF_NAMESPACE_END
