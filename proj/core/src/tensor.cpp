#include "prismer/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "prismer/error.hpp"

namespace prismer {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace detail {

void Node::accumulate(std::span<const double> delta) {
  if (!requires_grad) return;
  if (grad.empty()) {
    grad.assign(delta.begin(), delta.end());
    return;
  }
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += delta[i];
}

void Node::accumulate_at(std::size_t index, double delta) {
  if (!requires_grad) return;
  if (grad.empty()) grad.assign(value.size(), 0.0);
  grad[index] += delta;
}

}  // namespace detail

namespace {

std::shared_ptr<detail::Node> make_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  for (auto e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_to_string(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_to_string(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return node;
}

const detail::Node& checked(const std::shared_ptr<detail::Node>& node) {
  if (!node) throw ContractError("use of an undefined tensor");
  return *node;
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  return Tensor(make_leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(make_leaf({1}, {value}, requires_grad));
}

const Shape& Tensor::shape() const { return checked(node_).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_to_string(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return checked(node_).value.size(); }

std::span<const double> Tensor::data() const { return checked(node_).value; }

std::span<double> Tensor::mutable_data() {
  checked(node_);
  return node_->value;
}

double Tensor::item() const {
  const auto& n = checked(node_);
  if (n.value.size() != 1) throw ContractError("item() on a tensor of shape " + shape_to_string(n.shape));
  return n.value[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& n = checked(node_);
  if (index.size() != n.shape.size()) throw DimensionError("index rank mismatch");
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= n.shape[axis]) throw DimensionError("index out of range");
    flat = flat * n.shape[axis] + i;
    ++axis;
  }
  return n.value[flat];
}

bool Tensor::requires_grad() const { return checked(node_).requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  checked(node_);
  node_->requires_grad = flag;
  if (!flag) node_->grad.clear();
}

bool Tensor::has_grad() const { return !checked(node_).grad.empty(); }

std::span<const double> Tensor::grad() const { return checked(node_).grad; }

void Tensor::zero_grad() {
  checked(node_);
  node_->grad.clear();
}

void Tensor::backward() const {
  const auto& root = checked(node_);
  if (root.value.size() != 1) {
    throw ContractError("backward() needs a scalar output, got " + shape_to_string(root.shape));
  }
  if (!root.requires_grad) return;

  // Iterative post-order DFS: each node appears once, after its parents.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      auto* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  node_->accumulate_at(0, 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

Tensor Tensor::detach() const {
  const auto& n = checked(node_);
  return Tensor(make_leaf(n.shape, n.value, false));
}

Tensor Tensor::clone() const {
  const auto& n = checked(node_);
  return Tensor(make_leaf(n.shape, n.value, n.requires_grad));
}

namespace {
thread_local bool g_recording = true;
}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_recording) { g_recording = false; }
NoGradGuard::~NoGradGuard() { g_recording = previous_; }
bool NoGradGuard::recording() { return g_recording; }

Tensor Tensor::make_result(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                           std::function<void(detail::Node&)> backward) {
  auto node = make_leaf(std::move(shape), std::move(values), false);
  const bool any = NoGradGuard::recording() && std::any_of(parents.begin(), parents.end(),
                               [](const Tensor& t) { return t.requires_grad(); });
  if (any) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node_);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

}  // namespace prismer
