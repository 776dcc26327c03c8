#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace crispdec {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

namespace detail {

struct Node;
using BackwardFn = std::function<void(Node& self)>;

// One recorded value in the compute graph. Leaves have no backward_fn.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something flows in
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward_fn;

  std::vector<double>& grad_buffer();
};

}  // namespace detail

/// Dense N-dimensional array of doubles with optional reverse-mode tracking.
///
/// Tensor is a handle: copies share storage and graph position, like the
/// tensors of the big frameworks. Use clone() for an independent copy and
/// detach() to cut a value out of the graph. Maps use N x C x H x W layout.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int64_t dim(int axis) const;
  int rank() const { return static_cast<int>(shape().size()); }
  int64_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double at(int64_t n, int64_t c, int64_t h, int64_t w) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  /// Gradient accumulator; zeros when nothing has been accumulated yet.
  std::vector<double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Populates grads of every reachable tracked tensor. Leaf gradients
  /// accumulate across calls; intermediate ones are recomputed per call.
  void backward() const;

  Tensor detach() const;
  Tensor clone() const;
  const char* op_name() const;

  // Escape hatch for the op layer.
  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

/// Builds an op result. Records the node only when grad mode is on and at
/// least one input is tracked; otherwise the result is a plain leaf.
Tensor make_op_result(const char* op, Shape shape, std::vector<double> value,
                      std::vector<Tensor> inputs, detail::BackwardFn backward);

/// Nodes reachable from root that take part in gradient flow, inputs first.
std::vector<detail::Node*> topological_order(const Tensor& root);

}  // namespace crispdec
