// Copyright 2026 The casnet-cpp Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "casnet/tensor.h"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "casnet/errors.h"

namespace casnet {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

int64_t NumElements(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

std::string ShapeToString(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

namespace internal {

std::vector<double>& Node::EnsureGrad() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor MakeResult(const char* op, Shape shape, std::vector<double> value,
                  const std::vector<Tensor>& inputs, BackwardFn backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& t : inputs) {
      if (t.defined() && t.requires_grad()) needs = true;
    }
  }
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (const auto& t : inputs) node->inputs.push_back(t.node());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

Tensor MakeResult(const char* op, Shape shape, std::vector<double> value,
                  std::initializer_list<Tensor> inputs, BackwardFn backward) {
  return MakeResult(op, std::move(shape), std::move(value),
                    std::vector<Tensor>(inputs), std::move(backward));
}

}  // namespace internal

Tensor Tensor::Zeros(Shape shape, bool requires_grad) {
  return Full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::Full(Shape shape, double value, bool requires_grad) {
  std::vector<double> data(static_cast<size_t>(NumElements(shape)), value);
  return FromData(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::FromData(Shape shape, std::vector<double> data,
                        bool requires_grad) {
  for (int64_t d : shape) {
    CASNET_CHECK(d > 0, "tensor extents must be positive, got ",
                 ShapeToString(shape));
  }
  CASNET_CHECK(NumElements(shape) == static_cast<int64_t>(data.size()),
               "shape ", ShapeToString(shape), " needs ", NumElements(shape),
               " values, got ", data.size());
  auto node = std::make_shared<internal::Node>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::Scalar(double value, bool requires_grad) {
  return FromData({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }

int64_t Tensor::dim(int axis) const {
  const int n = ndim();
  if (axis < 0) axis += n;
  CASNET_CHECK(axis >= 0 && axis < n, "axis ", axis, " out of range for ",
               ShapeToString(shape()));
  return shape()[axis];
}

int64_t Tensor::numel() const {
  return static_cast<int64_t>(node_->value.size());
}

std::span<const double> Tensor::data() const { return node_->value; }

std::span<double> Tensor::mutable_data() {
  CASNET_CHECK(node_->is_leaf(), "mutable_data() on a non-leaf tensor (op ",
               node_->op, ")");
  return node_->value;
}

double Tensor::item() const {
  CASNET_CHECK(numel() == 1, "item() needs a single element, shape is ",
               ShapeToString(shape()));
  return node_->value[0];
}

double Tensor::at(std::initializer_list<int64_t> index) const {
  CASNET_CHECK(index.size() == shape().size(), "index rank mismatch");
  int64_t flat = 0;
  int axis = 0;
  for (int64_t i : index) {
    CASNET_CHECK(i >= 0 && i < shape()[axis], "index out of range");
    flat = flat * shape()[axis] + i;
    ++axis;
  }
  return node_->value[static_cast<size_t>(flat)];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  CASNET_CHECK(node_->is_leaf(), "requires_grad can only be set on leaves");
  node_->requires_grad = flag;
}

bool Tensor::has_grad() const {
  return !node_->grad.empty() && node_->grad.size() == node_->value.size();
}

std::span<const double> Tensor::grad() const { return node_->grad; }

std::span<double> Tensor::mutable_grad() { return node_->EnsureGrad(); }

void Tensor::ZeroGrad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::Detach() const {
  return FromData(shape(), node_->value, false);
}

void Backward(const Tensor& loss) {
  CASNET_CHECK(loss.defined(), "Backward() on an undefined tensor");
  CASNET_CHECK(loss.numel() == 1, "Backward() needs a scalar loss, got shape ",
               ShapeToString(loss.shape()));
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<internal::Node*> order;
  std::unordered_set<internal::Node*> visited;
  std::vector<std::pair<internal::Node*, size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      internal::Node* child = node->inputs[next++].get();
      if (child->requires_grad && !visited.count(child)) {
        visited.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Intermediate grads are per-pass; only leaves accumulate.
  for (internal::Node* node : order) {
    if (!node->is_leaf()) node->grad.assign(node->value.size(), 0.0);
  }
  loss.node()->EnsureGrad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    internal::Node* node = *it;
    if (!node->is_leaf()) node->backward(*node);
  }
}

bool GradEnabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
  g_grad_enabled = false;
}

NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

}  // namespace casnet
