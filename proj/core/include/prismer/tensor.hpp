#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace prismer {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

namespace detail {

// One vertex of the reverse-mode graph. Leaves have no backward function.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void accumulate(std::span<const double> delta);
  void accumulate_at(std::size_t index, double delta);
};

}  // namespace detail

// Dense row-major array of doubles with optional reverse-mode gradient.
//
// Tensor is a handle: copies share the underlying storage and graph node.
// Operations build new tensors; a result records its parents only when at
// least one of them requires a gradient, so frozen branches cost nothing.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Direct write access. Only meaningful on leaves (parameters, inputs).
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  // Seeds d(self)/d(self) = 1 and propagates through the recorded graph.
  // Requires a single-element tensor.
  void backward() const;

  // Same values, no graph link, no gradient requirement.
  Tensor detach() const;
  Tensor clone() const;

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  // Used by operation implementations.
  static Tensor make_result(Shape shape, std::vector<double> values,
                            std::vector<Tensor> parents,
                            std::function<void(detail::Node&)> backward);
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

  static bool recording();

 private:
  bool previous_;
};

}  // namespace prismer
