#include "peftseg/tensor.hpp"

#include <sstream>
#include <unordered_set>

#include "peftseg/errors.hpp"

namespace peftseg {
namespace {

thread_local bool g_grad_enabled = true;

}  // namespace

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::span<double> TensorNode::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto node = std::make_shared<TensorNode>();
  node->value.assign(static_cast<std::size_t>(shape_numel(shape)), value);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  if (static_cast<std::int64_t>(data.size()) != shape_numel(shape))
    throw ShapeError("from_data: " + std::to_string(data.size()) + " values for shape " + shape_str(shape));
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

const Shape& Tensor::shape() const { return node_->shape; }

std::int64_t Tensor::dim(int axis) const {
  const int r = rank();
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  return shape()[static_cast<std::size_t>(a)];
}

std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(node_->value.size()); }

std::span<double> Tensor::data() { return node_->value; }
std::span<const double> Tensor::data() const { return node_->value; }
std::span<const double> Tensor::grad() const { return node_->grad; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
void Tensor::set_requires_grad(bool on) { node_->requires_grad = on; }
void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::detach() const { return from_data(shape(), node_->value, false); }

void Tensor::backward() const {
  if (numel() != 1) throw ShapeError("backward() needs a single-element tensor, got " + shape_str(shape()));
  if (!node_->requires_grad) return;
  node_->grad_buffer()[0] += 1.0;

  // Iterative post-order DFS gives a topological order of the graph.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> seen;
  std::vector<std::pair<TensorNode*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      TensorNode* child = n->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

namespace detail {

Tensor make_result(Shape shape, std::initializer_list<const Tensor*> inputs) {
  auto node = std::make_shared<TensorNode>();
  node->value.assign(static_cast<std::size_t>(shape_numel(shape)), 0.0);
  node->shape = std::move(shape);
  if (g_grad_enabled) {
    for (const Tensor* t : inputs)
      if (t && t->requires_grad()) node->requires_grad = true;
    if (node->requires_grad)
      for (const Tensor* t : inputs)
        if (t && t->defined()) node->inputs.push_back(t->node_ptr());
  }
  return Tensor(std::move(node));
}

Tensor make_result(Shape shape, const std::vector<Tensor>& inputs) {
  auto node = std::make_shared<TensorNode>();
  node->value.assign(static_cast<std::size_t>(shape_numel(shape)), 0.0);
  node->shape = std::move(shape);
  if (g_grad_enabled) {
    for (const Tensor& t : inputs)
      if (t.requires_grad()) node->requires_grad = true;
    if (node->requires_grad)
      for (const Tensor& t : inputs) node->inputs.push_back(t.node_ptr());
  }
  return Tensor(std::move(node));
}

}  // namespace detail
}  // namespace peftseg
