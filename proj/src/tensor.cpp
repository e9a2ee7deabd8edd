#include "tdrd/tensor.hpp"

#include <algorithm>
#include <unordered_set>

#include "tdrd/errors.hpp"

namespace tdrd {

namespace {
thread_local bool g_grad_enabled = true;
}

std::string Shape::str() const {
  return "(" + std::to_string(n) + ", " + std::to_string(c) + ", " + std::to_string(h) + ", " +
         std::to_string(w) + ")";
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor::Tensor(Shape shape, double fill) : Tensor(shape, std::vector<double>(shape.numel(), fill)) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : node_(std::make_shared<detail::Node>()) {
  if (!shape.valid()) throw DimensionError("tensor extents must be positive, got " + shape.str());
  if (values.size() != shape.numel()) {
    throw DimensionError("tensor of shape " + shape.str() + " given " + std::to_string(values.size()) + " values");
  }
  node_->shape = shape;
  node_->value = std::move(values);
}

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t(shape, std::move(values));
  t.node_->requires_grad = true;
  return t;
}

const Shape& Tensor::shape() const { return node_->shape; }

std::span<const double> Tensor::values() const { return node_->value; }
std::span<double> Tensor::mutable_values() { return node_->value; }
std::span<const double> Tensor::grad() const { return node_->grad; }
std::span<double> Tensor::mutable_grad() { return node_->ensure_grad(); }

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape().str());
  return node_->value[0];
}

double Tensor::at(int n, int c, int h, int w) const { return node_->value[offset(n, c, h, w)]; }
double& Tensor::at(int n, int c, int h, int w) { return node_->value[offset(n, c, h, w)]; }

void Tensor::backward() const {
  if (numel() != 1) throw DimensionError("backward() without seed needs a scalar, got " + shape().str());
  const double one = 1.0;
  backward(std::span<const double>(&one, 1));
}

void Tensor::backward(std::span<const double> seed) const {
  if (seed.size() != numel()) throw DimensionError("backward seed size does not match tensor " + shape().str());
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child && child->requires_grad && !visited.count(child)) {
        visited.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  auto& root_grad = node_->ensure_grad();
  for (std::size_t i = 0; i < seed.size(); ++i) root_grad[i] += seed[i];

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

Tensor Tensor::detach() const { return Tensor(shape(), node_->value); }

Tensor Tensor::batch_item(int index) const {
  const Shape& s = shape();
  if (index < 0 || index >= s.n) throw DimensionError("batch index out of range");
  const std::size_t stride = static_cast<std::size_t>(s.c) * s.h * s.w;
  std::vector<double> v(node_->value.begin() + index * stride, node_->value.begin() + (index + 1) * stride);
  return Tensor(Shape{1, s.c, s.h, s.w}, std::move(v));
}

Tensor Tensor::from_op(Shape shape, std::vector<double> values, std::initializer_list<Tensor> inputs,
                       std::function<void(detail::Node&)> backward) {
  return from_op(shape, std::move(values), std::vector<Tensor>(inputs), std::move(backward));
}

Tensor Tensor::from_op(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                       std::function<void(detail::Node&)> backward) {
  Tensor out(shape, std::move(values));
  if (!g_grad_enabled) return out;
  const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (!any) return out;
  out.node_->requires_grad = true;
  for (const Tensor& t : inputs) out.node_->inputs.push_back(t.node_);
  out.node_->backward = std::move(backward);
  return out;
}

}  // namespace tdrd
