#include "namlab/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <stdexcept>
#include <string_view>
#include <unordered_set>

#if defined(__SSE3__) || defined(__x86_64__)
#include <pmmintrin.h>
#include <xmmintrin.h>
#endif

namespace namlab {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

std::uint64_t next_node_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

}  // namespace detail

namespace {
thread_local bool g_grad_enabled = true;

template <typename T>
std::shared_ptr<detail::Node<T>> new_leaf(Shape shape, std::vector<T> data, bool requires_grad) {
  if (numel(shape) != data.size()) {
    throw std::invalid_argument("tensor: shape " + shape_str(shape) + " holds " +
                                std::to_string(numel(shape)) + " values, got " +
                                std::to_string(data.size()));
  }
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  node->id = detail::next_node_id();
  return node;
}

template <typename T>
const detail::Node<T>& checked(const std::shared_ptr<detail::Node<T>>& node) {
  if (!node) throw std::logic_error("tensor: use of undefined tensor");
  return *node;
}
}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  const auto n = numel(shape);
  return Tensor(new_leaf<T>(std::move(shape), std::vector<T>(n, T(0)), requires_grad));
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  const auto n = numel(shape);
  return Tensor(new_leaf<T>(std::move(shape), std::vector<T>(n, value), requires_grad));
}

template <typename T>
Tensor<T> Tensor<T>::from_data(Shape shape, std::vector<T> data, bool requires_grad) {
  return Tensor(new_leaf<T>(std::move(shape), std::move(data), requires_grad));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return Tensor(new_leaf<T>(Shape{}, std::vector<T>{value}, requires_grad));
}

template <typename T>
const Shape& Tensor<T>::shape() const {
  return checked(node_).shape;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw std::out_of_range("tensor: axis " + std::to_string(axis) + " out of range for shape " +
                            shape_str(s));
  }
  return s[axis];
}

template <typename T>
std::size_t Tensor<T>::size() const {
  return checked(node_).value.size();
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
  return checked(node_).value;
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
  checked(node_);
  if (node_->backward || std::string_view(node_->op) != "leaf") {
    throw std::logic_error(std::string("tensor: result of '") + node_->op +
                           "' is immutable; only leaves expose storage");
  }
  return node_->value;
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  return checked(node_).grad;
}

template <typename T>
std::uint64_t Tensor<T>::node_id() const {
  return checked(node_).id;
}

template <typename T>
const char* Tensor<T>::op_name() const {
  return checked(node_).op;
}

template <typename T>
T Tensor<T>::item() const {
  const auto& n = checked(node_);
  if (n.value.size() != 1) {
    throw std::invalid_argument("tensor: item() needs one element, shape is " + shape_str(n.shape));
  }
  return n.value[0];
}

template <typename T>
std::vector<T> Tensor<T>::to_vector() const {
  return checked(node_).value;
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (node_) node_->grad.clear();
}

template <typename T>
void Tensor<T>::set_requires_grad(bool on) {
  checked(node_);
  if (node_->backward) throw std::logic_error("tensor: requires_grad can only be set on leaves");
  node_->requires_grad = on;
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  const auto& n = checked(node_);
  return Tensor(new_leaf<T>(n.shape, n.value, false));
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined()) throw std::logic_error("backward: undefined tensor");
  if (loss.size() != 1) {
    throw std::invalid_argument("backward: seed must be a scalar, got shape " +
                                shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw std::logic_error("backward: tensor is not attached to a differentiation tape");
  }

  using NodeT = detail::Node<T>;
  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> seen;
  std::vector<NodeT*> stack{loss.node().get()};
  seen.insert(stack.back());
  while (!stack.empty()) {
    NodeT* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  // Node ids increase with execution, so descending id is reverse execution order.
  std::sort(order.begin(), order.end(), [](const NodeT* a, const NodeT* b) { return a->id > b->id; });

  loss.node()->ensure_grad()[0] += T(1);
  for (NodeT* n : order) {
    if (!n->backward || n->grad.empty()) continue;
    n->backward(*n);
    // Interior adjoints are not needed once propagated.
    std::vector<T>().swap(n->grad);
  }
}

template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> value,
                      const std::vector<Tensor<T>>& inputs,
                      std::function<void(detail::Node<T>&)> backward_fn) {
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->id = detail::next_node_id();
  node->op = op;
  bool any = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) any = any || in.requires_grad();
  }
  if (any) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (const auto& in : inputs) node->parents.push_back(in.node());
    node->backward = std::move(backward_fn);
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> value,
                      std::initializer_list<Tensor<T>> inputs,
                      std::function<void(detail::Node<T>&)> backward_fn) {
  return make_result<T>(op, std::move(shape), std::move(value), std::vector<Tensor<T>>(inputs),
                        std::move(backward_fn));
}

#define NAMLAB_INSTANTIATE(T)                                                                    \
  template class Tensor<T>;                                                                      \
  template void backward<T>(const Tensor<T>&);                                                   \
  template Tensor<T> make_result<T>(const char*, Shape, std::vector<T>,                          \
                                    const std::vector<Tensor<T>>&,                               \
                                    std::function<void(detail::Node<T>&)>);                      \
  template Tensor<T> make_result<T>(const char*, Shape, std::vector<T>,                          \
                                    std::initializer_list<Tensor<T>>,                            \
                                    std::function<void(detail::Node<T>&)>);

NAMLAB_INSTANTIATE(float)
NAMLAB_INSTANTIATE(double)

void flush_denormals_to_zero() {
#if defined(__SSE3__) || defined(__x86_64__)
  _MM_SET_FLUSH_ZERO_MODE(_MM_FLUSH_ZERO_ON);
  _MM_SET_DENORMALS_ZERO_MODE(_MM_DENORMALS_ZERO_ON);
#endif
}

}  // namespace namlab
