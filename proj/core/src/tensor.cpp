// invrender: single-image inverse rendering toolkit.
// SPDX-License-Identifier: Apache-2.0

#include "invrender/tensor.h"

#include <algorithm>
#include <unordered_set>

namespace invrender {

namespace {
thread_local bool g_grad_enabled = true;
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

bool grad_recording_enabled() { return g_grad_enabled; }

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->values.assign(static_cast<size_t>(impl->size()), 0.0);
  impl->requires_grad = requires_grad;
  return Tensor(impl);
}

Tensor Tensor::full(std::vector<int> shape, real value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.impl()->values.begin(), t.impl()->values.end(), value);
  return t;
}

Tensor Tensor::from_vector(std::vector<int> shape, std::vector<real> values,
                           bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  if (static_cast<int64_t>(values.size()) != impl->size())
    throw ArgumentError("Tensor::from_vector: size mismatch");
  impl->values = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(impl);
}

Tensor Tensor::scalar(real value) { return from_vector({1}, {value}); }

real Tensor::item() const {
  if (!impl_ || impl_->size() != 1)
    throw ArgumentError("Tensor::item: not a one-element tensor");
  return impl_->values[0];
}

void Tensor::set_requires_grad(bool v) {
  if (!impl_) throw ArgumentError("set_requires_grad: undefined tensor");
  if (!impl_->parents.empty())
    throw ArgumentError("set_requires_grad: only valid on leaf tensors");
  impl_->requires_grad = v;
}

Tensor Tensor::detach() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->values = impl_->values;
  impl->requires_grad = false;
  return Tensor(impl);
}

const std::vector<real>& Tensor::grad() const {
  if (!impl_ || impl_->grad.empty())
    throw ArgumentError("Tensor::grad: no gradient accumulated");
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_) impl_->grad.clear();
}

std::vector<real>& grad_buffer(TensorImpl& t) {
  if (t.grad.empty()) t.grad.assign(static_cast<size_t>(t.size()), 0.0);
  return t.grad;
}

void Tensor::backward() {
  if (!impl_ || impl_->size() != 1)
    throw ArgumentError("backward: root must be scalar");
  // Iterative post-order DFS over parents, then sweep in reverse.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> visited;
  struct Frame {
    TensorImpl* node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({impl_.get(), 0});
  visited.insert(impl_.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      TensorImpl* p = f.node->parents[f.next_parent++].get();
      if (visited.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }
  grad_buffer(*impl_)[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
}

Tensor make_op(std::vector<int> shape, std::vector<real> values,
               std::vector<TensorImplPtr> parents,
               std::function<void(TensorImpl&)> backward_fn) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->values = std::move(values);
  if (static_cast<int64_t>(impl->values.size()) != impl->size())
    throw ArgumentError("make_op: value count does not match shape");
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& p : parents)
      if (p && p->requires_grad) needs = true;
  }
  if (needs) {
    impl->requires_grad = true;
    impl->parents = std::move(parents);
    impl->backward_fn = std::move(backward_fn);
  }
  return Tensor(impl);
}

}  // namespace invrender
