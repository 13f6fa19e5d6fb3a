#pragma once

// Minimal reverse-mode autograd over dense double tensors.
//
// A Tensor is a shared handle to a TensorNode. Ops build nodes whose backward
// closure scatters the node's gradient into its inputs. Nodes that do not
// require grad carry no closure and keep no inputs alive, so forward passes
// through frozen weights with non-trainable inputs build no graph at all.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace peftseg {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first written
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> inputs;
  std::function<void(TensorNode&)> backward;

  /// Zero-initialised gradient buffer, allocated on first use.
  std::span<double> grad_buffer();
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  /// Size along `axis`; negative axes count from the back.
  std::int64_t dim(int axis) const;
  std::int64_t numel() const;

  std::span<double> data();
  std::span<const double> data() const;
  std::span<const double> grad() const;
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  void zero_grad();

  /// Backpropagates from a single-element tensor.
  void backward() const;

  /// Value copy with no graph attached.
  Tensor detach() const;

  TensorNode* node() const { return node_.get(); }
  const std::shared_ptr<TensorNode>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

/// Disables graph construction on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

namespace detail {

/// Allocates an op result. The node records `inputs` and requires grad only
/// when grad mode is on and at least one input requires grad; callers attach
/// a backward closure iff the returned tensor requires grad.
Tensor make_result(Shape shape, std::initializer_list<const Tensor*> inputs);
Tensor make_result(Shape shape, const std::vector<Tensor>& inputs);

}  // namespace detail
}  // namespace peftseg
