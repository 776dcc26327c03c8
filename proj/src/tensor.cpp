#include "crispdec/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "crispdec/check.hpp"

namespace crispdec {

namespace {
thread_local bool g_grad_enabled = true;
}

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t e : shape) {
    require_shape(e >= 0, "negative extent in shape");
    n *= e;
  }
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  return os.str();
}

std::vector<double>& detail::Node::grad_buffer() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = shape_numel(shape);
  return from_data(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  require_shape(static_cast<int64_t>(data.size()) == shape_numel(shape),
                "data size " + std::to_string(data.size()) + " does not match shape " +
                    shape_to_string(shape));
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({}, {value}, requires_grad);
}

const Shape& Tensor::shape() const {
  require(defined(), "undefined tensor");
  return node_->shape;
}

int64_t Tensor::dim(int axis) const {
  const auto& s = shape();
  if (axis < 0) axis += static_cast<int>(s.size());
  require_shape(axis >= 0 && axis < static_cast<int>(s.size()), "axis out of range");
  return s[axis];
}

int64_t Tensor::numel() const { return static_cast<int64_t>(node_->value.size()); }

std::span<const double> Tensor::data() const {
  require(defined(), "undefined tensor");
  return node_->value;
}

std::span<double> Tensor::mutable_data() {
  require(defined(), "undefined tensor");
  return node_->value;
}

double Tensor::item() const {
  require_shape(numel() == 1, "item() on tensor with " + std::to_string(numel()) +
                                  " elements");
  return node_->value[0];
}

double Tensor::at(int64_t n, int64_t c, int64_t h, int64_t w) const {
  const auto& s = shape();
  require_shape(s.size() == 4, "at() expects a rank-4 tensor");
  return node_->value[((n * s[1] + c) * s[2] + h) * s[3] + w];
}

bool Tensor::requires_grad() const { return defined() && node_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  require(defined(), "undefined tensor");
  require(!node_->backward_fn, "requires_grad can only be set on leaf tensors");
  node_->requires_grad = flag;
}

bool Tensor::has_grad() const { return defined() && !node_->grad.empty(); }

std::vector<double> Tensor::grad() const {
  require(defined(), "undefined tensor");
  if (node_->grad.empty()) return std::vector<double>(node_->value.size(), 0.0);
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() { return node_->grad_buffer(); }

void Tensor::zero_grad() {
  if (defined()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  return from_data(shape(), node_->value, false);
}

Tensor Tensor::clone() const {
  return from_data(shape(), node_->value, requires_grad() && !node_->backward_fn);
}

const char* Tensor::op_name() const { return defined() ? node_->op : "undefined"; }

std::vector<detail::Node*> topological_order(const Tensor& root) {
  std::vector<detail::Node*> order;
  if (!root.requires_grad()) return order;
  std::unordered_set<detail::Node*> visited;
  // Iterative post-order DFS; recursion depth would follow graph depth.
  std::vector<std::pair<detail::Node*, size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

void Tensor::backward() const {
  require_shape(defined() && numel() == 1,
                "backward() needs a scalar root, got shape " + shape_to_string(shape()));
  auto order = topological_order(*this);
  if (order.empty()) return;
  for (auto* node : order) {
    if (node->backward_fn) std::fill(node->grad.begin(), node->grad.end(), 0.0);
  }
  node_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_mode_enabled() { return g_grad_enabled; }

Tensor make_op_result(const char* op, Shape shape, std::vector<double> value,
                      std::vector<Tensor> inputs, detail::BackwardFn backward) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  bool track = g_grad_enabled &&
               std::any_of(inputs.begin(), inputs.end(),
                           [](const Tensor& t) { return t.requires_grad(); });
  if (track) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& t : inputs) node->inputs.push_back(t.node());
    node->backward_fn = std::move(backward);
  }
  return Tensor(std::move(node));
}

}  // namespace crispdec
