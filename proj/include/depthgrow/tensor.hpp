#pragma once

#include <cstdint>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "depthgrow/errors.hpp"

namespace depthgrow {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? " x " : "") << s[i];
  os << "]";
  return os.str();
}

template <typename T>
struct TensorStorage {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // sized like value iff requires_grad
  bool requires_grad = false;
};

// Shared handle to a dense row-major array with an optional gradient buffer.
// Copying a Tensor copies the handle, not the storage; autodiff closures rely
// on this to reach the same buffers during the backward pass.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) {
    for (int d : shape)
      if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
    d_ = std::make_shared<TensorStorage<T>>();
    d_->value.assign(static_cast<size_t>(shape_numel(shape)), fill);
    d_->shape = std::move(shape);
  }

  static Tensor from(Shape shape, std::vector<T> data) {
    Tensor t(shape);
    if (static_cast<int64_t>(data.size()) != t.numel())
      throw ShapeError("tensor data size " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    t.d_->value = std::move(data);
    return t;
  }

  static Tensor scalar(T v) { return from({1}, {v}); }

  bool defined() const { return static_cast<bool>(d_); }
  const Shape& shape() const { return d_->shape; }
  int rank() const { return static_cast<int>(d_->shape.size()); }
  int dim(int i) const { return d_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(d_->value.size()); }

  T* data() const { return d_->value.data(); }
  std::vector<T>& vec() const { return d_->value; }

  // 2-D convenience accessor.
  T& at(int r, int c) const { return d_->value[static_cast<size_t>(r) * dim(1) + c]; }

  T item() const {
    if (numel() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
    return d_->value[0];
  }

  bool requires_grad() const { return d_ && d_->requires_grad; }

  void set_requires_grad(bool b) {
    d_->requires_grad = b;
    if (b)
      d_->grad.assign(d_->value.size(), T(0));
    else {
      d_->grad.clear();
      d_->grad.shrink_to_fit();
    }
  }

  // Null unless requires_grad.
  T* grad() const { return d_->requires_grad ? d_->grad.data() : nullptr; }

  void zero_grad() {
    if (d_ && d_->requires_grad) d_->grad.assign(d_->value.size(), T(0));
  }

  TensorStorage<T>* storage() const { return d_.get(); }

  bool same_storage(const Tensor& other) const { return d_ == other.d_; }

 private:
  std::shared_ptr<TensorStorage<T>> d_;
};

// A named tensor in a model. `trainable` mirrors tensor.requires_grad: a
// frozen parameter never receives gradient and the optimizer never touches it.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> t, bool train = true) : name(std::move(n)), tensor(std::move(t)) {
    set_trainable(train);
  }

  void set_trainable(bool b) {
    trainable = b;
    tensor.set_requires_grad(b);
  }
};

}  // namespace depthgrow
