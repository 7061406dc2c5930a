// Copyright 2026 The casnet-cpp Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Dense double-precision tensors that record a reverse-mode gradient graph.
//
// A Tensor is a cheap handle onto a shared Node. Values are never modified
// after an op produces them; leaves (parameters, inputs) may be updated in
// place between steps through mutable_data(). A graph must be built and
// differentiated on one thread. Separate graphs may run concurrently as long
// as no two of them call Backward() into the same leaf.

#ifndef CASNET_TENSOR_H_
#define CASNET_TENSOR_H_

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace casnet {

using Shape = std::vector<int64_t>;

int64_t NumElements(const Shape& shape);
std::string ShapeToString(const Shape& shape);

namespace internal {

struct Node {
  Shape shape;
  std::vector<double> value;
  // Empty until a backward pass touches the node.
  std::vector<double> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads self.grad and accumulates into the inputs' grads. Empty for leaves.
  std::function<void(Node& self)> backward;

  bool is_leaf() const { return !backward; }
  // Allocates a zero grad on first use and returns it.
  std::vector<double>& EnsureGrad();
};

}  // namespace internal

class Tensor {
 public:
  Tensor() = default;

  static Tensor Zeros(Shape shape, bool requires_grad = false);
  static Tensor Full(Shape shape, double value, bool requires_grad = false);
  static Tensor FromData(Shape shape, std::vector<double> data,
                         bool requires_grad = false);
  static Tensor Scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int64_t dim(int axis) const;
  int ndim() const { return static_cast<int>(shape().size()); }
  int64_t numel() const;

  std::span<const double> data() const;
  // Leaves only. Used by optimizers, checkpoint loading and test probes.
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<int64_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void ZeroGrad();

  // Same values, cut from the graph.
  Tensor Detach() const;

  const std::shared_ptr<internal::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<internal::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<internal::Node> node_;
};

// Populates grad of every requires_grad ancestor of `loss`. Leaf grads
// accumulate across calls; call ZeroGrad() between steps.
void Backward(const Tensor& loss);

// True when ops record the graph on this thread.
bool GradEnabled();

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace internal {

using BackwardFn = std::function<void(Node& self)>;

// Builds an op result. Records `backward` only when grad mode is on and at
// least one input requires grad.
Tensor MakeResult(const char* op, Shape shape, std::vector<double> value,
                  std::initializer_list<Tensor> inputs, BackwardFn backward);
Tensor MakeResult(const char* op, Shape shape, std::vector<double> value,
                  const std::vector<Tensor>& inputs, BackwardFn backward);

}  // namespace internal

}  // namespace casnet

#endif  // CASNET_TENSOR_H_
