#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "spikingformer/precision.hpp"

SPKF_NAMESPACE_BEGIN

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Raised for any dimension disagreement between operands.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Shared buffer behind a Tensor. Gradients are allocated on first use.
struct TensorStorage {
  Shape shape;
  std::vector<Real> data;
  std::vector<Real> grad;
  bool requires_grad = false;
  std::uint64_t tape_id = 0;  // 0: not produced by a recorded op

  std::vector<Real>& ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), Real{0});
    return grad;
  }
};

/// Dense row-major tensor. Copies share storage; use clone() for a deep copy.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<Real> values);

  static Tensor zeros(Shape shape);
  static Tensor ones(Shape shape);
  static Tensor full(Shape shape, Real value);
  static Tensor scalar(Real value);

  const Shape& shape() const { return storage_->shape; }
  std::size_t rank() const { return storage_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return storage_->data.size(); }

  std::span<const Real> data() const { return storage_->data; }
  std::span<Real> mutable_data() { return storage_->data; }
  Real item() const;
  Real operator[](std::size_t flat_index) const { return storage_->data[flat_index]; }

  bool requires_grad() const { return storage_->requires_grad; }
  Tensor& set_requires_grad(bool value = true);
  bool has_grad() const { return storage_->grad.size() == storage_->data.size(); }
  /// Gradient with the tensor's shape; zeros when nothing flowed into it.
  Tensor grad() const;
  void zero_grad();

  Tensor clone() const;
  bool same_storage(const Tensor& other) const { return storage_ == other.storage_; }

  const std::shared_ptr<TensorStorage>& storage() const { return storage_; }

 private:
  explicit Tensor(std::shared_ptr<TensorStorage> storage);
  friend Tensor make_tensor(std::shared_ptr<TensorStorage> storage);

  std::shared_ptr<TensorStorage> storage_;
};

Tensor make_tensor(std::shared_ptr<TensorStorage> storage);

void require_same_shape(const Tensor& a, const Tensor& b, const char* op);

SPKF_NAMESPACE_END
