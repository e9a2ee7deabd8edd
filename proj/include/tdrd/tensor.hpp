#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace tdrd {

// Extents of a 4-D NCHW array. Vectors and matrices are carried as
// (n, c, 1, 1) and (out, in, 1, 1) respectively.
struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  bool valid() const { return n >= 1 && c >= 1 && h >= 1 && w >= 1; }
  std::string str() const;

  friend bool operator==(const Shape&, const Shape&) = default;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into inputs' grads.
  std::function<void(Node&)> backward;

  std::vector<double>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

// Reference-counted handle to a dense double-precision NCHW array that
// optionally records the operation that produced it for reverse-mode
// differentiation. Copies share storage.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  // Leaf that accumulates gradients.
  static Tensor parameter(Shape shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t numel() const { return shape().numel(); }

  std::span<const double> values() const;
  std::span<double> mutable_values();
  // Empty until a backward pass reaches this tensor.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();
  bool requires_grad() const;

  double item() const;
  double at(int n, int c, int h, int w) const;
  double& at(int n, int c, int h, int w);
  std::size_t offset(int n, int c, int h, int w) const {
    const Shape& s = shape();
    return ((static_cast<std::size_t>(n) * s.c + c) * s.h + h) * s.w + w;
  }

  // Seeds d(self)/d(self) = 1; requires a single-element tensor.
  void backward() const;
  // Vector-Jacobian product with the given upstream gradient.
  void backward(std::span<const double> seed) const;

  // Value copy without graph history.
  Tensor detach() const;

  // Batch item `index` as a (1, c, h, w) detached tensor.
  Tensor batch_item(int index) const;

  // Builds the output of a differentiable op. History is recorded only
  // when gradients are enabled and at least one input requires them.
  static Tensor from_op(Shape shape, std::vector<double> values, std::initializer_list<Tensor> inputs,
                        std::function<void(detail::Node&)> backward);
  static Tensor from_op(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                        std::function<void(detail::Node&)> backward);

  detail::Node* node() const { return node_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

using FeatureMap = Tensor;

bool grad_enabled();

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

}  // namespace tdrd
