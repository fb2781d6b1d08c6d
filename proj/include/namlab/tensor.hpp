// Dense tensors with reverse-mode differentiation.
//
// A Tensor is a handle onto a node of a dynamically recorded differentiation
// tape. Every operation allocates a fresh value buffer, so no two nodes share
// storage; copying a Tensor copies the handle (same node_id), `detach()` makes
// an independent leaf. Only leaves expose mutable storage.
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace namlab {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until an adjoint reaches this node
  bool requires_grad = false;
  std::uint64_t id = 0;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Propagates this->grad into parents' grads. Null for leaves.
  std::function<void(Node&)> backward;

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

std::uint64_t next_node_id();

}  // namespace detail

template <typename T>
class Tensor {
 public:
  using Scalar = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;

  std::span<const T> data() const;
  // Leaf storage (parameters, inputs). Throws for operation results.
  std::span<T> mutable_data();
  std::span<const T> grad() const;
  bool has_grad() const { return node_ && !node_->grad.empty(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  std::uint64_t node_id() const;
  const char* op_name() const;

  T item() const;
  T operator[](std::size_t flat) const { return data()[flat]; }
  std::vector<T> to_vector() const;

  void zero_grad();
  void set_requires_grad(bool on);
  Tensor detach() const;

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

// Seeds d(loss)/d(loss) = 1 and replays adjoints in reverse execution order.
// Leaf gradients accumulate across calls until zero_grad().
template <typename T>
void backward(const Tensor<T>& loss);

// While alive on the current thread, operations do not record adjoints.
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

// Sets flush-to-zero / denormals-are-zero for the calling thread (x86 only;
// a no-op elsewhere). Diffused head weights otherwise drift into subnormal
// range and slow every later step several-fold.
void flush_denormals_to_zero();

// Building block for operations defined outside ops.cpp. The backward
// closure receives the result node; inputs are available as node.parents in
// the order given. It runs only if some input requires grad.
template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> value,
                      std::initializer_list<Tensor<T>> inputs,
                      std::function<void(detail::Node<T>&)> backward_fn);

template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> value,
                      const std::vector<Tensor<T>>& inputs,
                      std::function<void(detail::Node<T>&)> backward_fn);

}  // namespace namlab
