#include "spikingformer/tensor.hpp"

#include <algorithm>
#include <sstream>

SPKF_NAMESPACE_BEGIN

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor::Tensor() : Tensor(Shape{0}) {}

Tensor::Tensor(Shape shape) : storage_(std::make_shared<TensorStorage>()) {
  storage_->data.assign(shape_numel(shape), Real{0});
  storage_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<Real> values) : storage_(std::make_shared<TensorStorage>()) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor: shape " + shape_to_string(shape) + " holds " +
                     std::to_string(shape_numel(shape)) + " elements, got " +
                     std::to_string(values.size()));
  }
  storage_->shape = std::move(shape);
  storage_->data = std::move(values);
}

Tensor::Tensor(std::shared_ptr<TensorStorage> storage) : storage_(std::move(storage)) {}

Tensor make_tensor(std::shared_ptr<TensorStorage> storage) { return Tensor(std::move(storage)); }

Tensor Tensor::zeros(Shape shape) { return Tensor(std::move(shape)); }

Tensor Tensor::ones(Shape shape) { return full(std::move(shape), Real{1}); }

Tensor Tensor::full(Shape shape, Real value) {
  Tensor t(std::move(shape));
  std::fill(t.storage_->data.begin(), t.storage_->data.end(), value);
  return t;
}

Tensor Tensor::scalar(Real value) { return Tensor(Shape{1}, {value}); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("tensor: axis " + std::to_string(axis) + " out of range for shape " +
                     shape_to_string(shape()));
  }
  return storage_->shape[axis];
}

Real Tensor::item() const {
  if (numel() != 1) throw ShapeError("tensor: item() on shape " + shape_to_string(shape()));
  return storage_->data[0];
}

Tensor& Tensor::set_requires_grad(bool value) {
  storage_->requires_grad = value;
  return *this;
}

Tensor Tensor::grad() const {
  if (!has_grad()) return Tensor::zeros(shape());
  return Tensor(shape(), storage_->grad);
}

void Tensor::zero_grad() { storage_->grad.clear(); }

Tensor Tensor::clone() const {
  Tensor t(shape(), storage_->data);
  t.storage_->requires_grad = storage_->requires_grad;
  return t;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
}

SPKF_NAMESPACE_END
