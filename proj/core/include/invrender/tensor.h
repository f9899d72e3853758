// invrender: single-image inverse rendering toolkit.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "invrender/errors.h"
#include "invrender/image.h"

namespace invrender {

// Reverse-mode autodiff over dense double tensors. Single-threaded and
// allocation-per-op: sized for low-resolution training loops where bitwise
// reproducibility and finite-difference-checkable gradients matter more
// than throughput.

struct TensorImpl;
using TensorImplPtr = std::shared_ptr<TensorImpl>;

struct TensorImpl {
  std::vector<int> shape;
  std::vector<real> values;
  std::vector<real> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<TensorImplPtr> parents;
  std::function<void(TensorImpl&)> backward_fn;

  int64_t size() const {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(TensorImplPtr impl) : impl_(std::move(impl)) {}

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, real value,
                     bool requires_grad = false);
  static Tensor from_vector(std::vector<int> shape, std::vector<real> values,
                            bool requires_grad = false);
  static Tensor scalar(real value);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const { return impl_->shape; }
  int dim(int i) const { return impl_->shape[i]; }
  int ndim() const { return static_cast<int>(impl_->shape.size()); }
  int64_t size() const { return impl_->size(); }

  real* data() { return impl_->values.data(); }
  const real* data() const { return impl_->values.data(); }
  std::vector<real>& values() { return impl_->values; }
  const std::vector<real>& values() const { return impl_->values; }

  // Value of a one-element tensor.
  real item() const;

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  void set_requires_grad(bool v);

  // Same values, no graph. Copies storage; intended for freezing targets.
  Tensor detach() const;

  const std::vector<real>& grad() const;
  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  void zero_grad();

  // Reverse-mode sweep from a scalar root.
  void backward();

  TensorImplPtr impl() const { return impl_; }

 private:
  TensorImplPtr impl_;
};

// Disables graph recording within scope (forward-only evaluation).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_recording_enabled();

// Builder for differentiable ops: attaches parents and a backward closure
// when recording is on and any parent requires grad. The closure reads
// self.grad and accumulates into parent grads via grad_buffer().
Tensor make_op(std::vector<int> shape, std::vector<real> values,
               std::vector<TensorImplPtr> parents,
               std::function<void(TensorImpl&)> backward_fn);

std::vector<real>& grad_buffer(TensorImpl& t);

}  // namespace invrender
