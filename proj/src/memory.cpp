#include "namlab/memory.hpp"

#include <Eigen/Core>
#include <cmath>
#include <stdexcept>
#include <string>

namespace namlab {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
Eigen::Map<const RowMat<T>> mat(const T* p, std::size_t r, std::size_t c) {
  return {p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)};
}
template <typename T>
Eigen::Map<RowMat<T>> mat(T* p, std::size_t r, std::size_t c) {
  return {p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)};
}
template <typename T>
Eigen::Map<const Vec<T>> vec(const T* p, std::size_t n) {
  return {p, static_cast<Eigen::Index>(n)};
}
template <typename T>
Eigen::Map<Vec<T>> vec(T* p, std::size_t n) {
  return {p, static_cast<Eigen::Index>(n)};
}

struct Layout {
  Shape lead;
  std::size_t groups;
  std::size_t rows;  // d_v
  std::size_t cols;  // d_k
};

[[noreturn]] void mismatch(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

template <typename T>
Layout memory_layout(const char* op, const Tensor<T>& m) {
  if (m.rank() < 2) throw std::invalid_argument(std::string(op) + ": memory must be [..., d_v, d_k], got " + shape_str(m.shape()));
  Layout l;
  l.lead.assign(m.shape().begin(), m.shape().end() - 2);
  l.groups = numel(l.lead);
  l.rows = m.shape()[m.rank() - 2];
  l.cols = m.shape().back();
  return l;
}

template <typename T>
void check_vector(const char* op, const Tensor<T>& m, const Layout& l, const Tensor<T>& v, std::size_t len) {
  Shape want = l.lead;
  want.push_back(len);
  if (v.shape() != want) mismatch(op, m.shape(), v.shape());
}

template <typename T>
void check_prob(const char* op, const Tensor<T>& m, const Layout& l, const Tensor<T>& p) {
  if (!p.defined()) return;
  if (p.shape() != l.lead) mismatch(op, m.shape(), p.shape());
  for (T v : p.data()) {
    if (!(v >= T(0) && v <= T(1))) {
      throw std::invalid_argument(std::string(op) + ": probability " + std::to_string(static_cast<double>(v)) +
                                  " outside [0, 1]");
    }
  }
}

template <typename T>
T prob_at(const detail::Node<T>* p, std::size_t g) {
  return p ? p->value[g] : T(1);
}

}  // namespace

template <typename T>
Tensor<T> nam_read(const Tensor<T>& memory, const Tensor<T>& query, const Tensor<T>& prob) {
  const Layout l = memory_layout("nam_read", memory);
  check_vector("nam_read", memory, l, query, l.cols);
  check_prob("nam_read", memory, l, prob);
  const bool has_p = prob.defined();
  const std::size_t dv = l.rows, dk = l.cols;
  std::vector<T> out(l.groups * dv);
  const T* M = memory.data().data();
  const T* q = query.data().data();
  const auto* pn = has_p ? prob.node().get() : nullptr;
  for (std::size_t g = 0; g < l.groups; ++g) {
    vec(out.data() + g * dv, dv).noalias() = prob_at(pn, g) * (mat(M + g * dv * dk, dv, dk) * vec(q + g * dk, dk));
  }
  Shape shape = l.lead;
  shape.push_back(dv);
  std::vector<Tensor<T>> inputs{memory, query};
  if (has_p) inputs.push_back(prob);
  return make_result<T>("nam_read", shape, std::move(out), inputs, [l, has_p](detail::Node<T>& self) {
    const std::size_t dv = l.rows, dk = l.cols;
    auto& pm = *self.parents[0];
    auto& pq = *self.parents[1];
    detail::Node<T>* pp = has_p ? self.parents[2].get() : nullptr;
    for (std::size_t g = 0; g < l.groups; ++g) {
      const T p = prob_at(pp, g);
      auto dr = vec(self.grad.data() + g * dv, dv);
      auto M = mat(pm.value.data() + g * dv * dk, dv, dk);
      auto q = vec(pq.value.data() + g * dk, dk);
      if (pm.requires_grad) mat(pm.ensure_grad().data() + g * dv * dk, dv, dk).noalias() += p * dr * q.transpose();
      if (pq.requires_grad) vec(pq.ensure_grad().data() + g * dk, dk).noalias() += p * (M.transpose() * dr);
      if (pp && pp->requires_grad) pp->ensure_grad()[g] += dr.dot(M * q);
    }
  });
}

template <typename T>
Tensor<T> nam_read_transposed(const Tensor<T>& memory, const Tensor<T>& query, const Tensor<T>& prob) {
  const Layout l = memory_layout("nam_read_transposed", memory);
  check_vector("nam_read_transposed", memory, l, query, l.rows);
  check_prob("nam_read_transposed", memory, l, prob);
  const bool has_p = prob.defined();
  const std::size_t dv = l.rows, dk = l.cols;
  std::vector<T> out(l.groups * dk);
  const T* M = memory.data().data();
  const T* q = query.data().data();
  const auto* pn = has_p ? prob.node().get() : nullptr;
  for (std::size_t g = 0; g < l.groups; ++g) {
    vec(out.data() + g * dk, dk).noalias() =
        prob_at(pn, g) * (mat(M + g * dv * dk, dv, dk).transpose() * vec(q + g * dv, dv));
  }
  Shape shape = l.lead;
  shape.push_back(dk);
  std::vector<Tensor<T>> inputs{memory, query};
  if (has_p) inputs.push_back(prob);
  return make_result<T>("nam_read_transposed", shape, std::move(out), inputs, [l, has_p](detail::Node<T>& self) {
    const std::size_t dv = l.rows, dk = l.cols;
    auto& pm = *self.parents[0];
    auto& pq = *self.parents[1];
    detail::Node<T>* pp = has_p ? self.parents[2].get() : nullptr;
    for (std::size_t g = 0; g < l.groups; ++g) {
      const T p = prob_at(pp, g);
      auto dr = vec(self.grad.data() + g * dk, dk);
      auto M = mat(pm.value.data() + g * dv * dk, dv, dk);
      auto q = vec(pq.value.data() + g * dv, dv);
      if (pm.requires_grad) mat(pm.ensure_grad().data() + g * dv * dk, dv, dk).noalias() += p * q * dr.transpose();
      if (pq.requires_grad) vec(pq.ensure_grad().data() + g * dv, dv).noalias() += p * (M * dr);
      if (pp && pp->requires_grad) pp->ensure_grad()[g] += dr.dot(M.transpose() * q);
    }
  });
}

template <typename T>
Tensor<T> nam_write(const Tensor<T>& memory, const Tensor<T>& key, const Tensor<T>& value,
                    const Tensor<T>& p_write, const Tensor<T>& p_erase) {
  const Layout l = memory_layout("nam_write", memory);
  check_vector("nam_write", memory, l, key, l.cols);
  check_vector("nam_write", memory, l, value, l.rows);
  if (!p_write.defined() || !p_erase.defined()) throw std::invalid_argument("nam_write: write and erase probabilities are required");
  check_prob("nam_write", memory, l, p_write);
  check_prob("nam_write", memory, l, p_erase);
  const std::size_t dv = l.rows, dk = l.cols;
  std::vector<T> out(memory.data().begin(), memory.data().end());
  // u = M k is kept for the adjoint of the erase term.
  std::vector<T> recalled(l.groups * dv);
  const T* M = memory.data().data();
  const T* k = key.data().data();
  const T* v = value.data().data();
  const T* pw = p_write.data().data();
  const T* pe = p_erase.data().data();
  for (std::size_t g = 0; g < l.groups; ++g) {
    auto kg = vec(k + g * dk, dk);
    auto u = vec(recalled.data() + g * dv, dv);
    u.noalias() = mat(M + g * dv * dk, dv, dk) * kg;
    const Vec<T> w = pw[g] * vec(v + g * dv, dv) - pe[g] * u;
    mat(out.data() + g * dv * dk, dv, dk).noalias() += w * kg.transpose();
  }
  return make_result<T>("nam_write", memory.shape(), std::move(out), {memory, key, value, p_write, p_erase},
                        [l, recalled = std::move(recalled)](detail::Node<T>& self) {
    const std::size_t dv = l.rows, dk = l.cols;
    auto& pm = *self.parents[0];
    auto& pk = *self.parents[1];
    auto& pv = *self.parents[2];
    auto& ppw = *self.parents[3];
    auto& ppe = *self.parents[4];
    Vec<T> gk(dv);
    for (std::size_t g = 0; g < l.groups; ++g) {
      auto G = mat(self.grad.data() + g * dv * dk, dv, dk);
      auto M = mat(pm.value.data() + g * dv * dk, dv, dk);
      auto k = vec(pk.value.data() + g * dk, dk);
      auto v = vec(pv.value.data() + g * dv, dv);
      auto u = vec(recalled.data() + g * dv, dv);
      const T pw = ppw.value[g];
      const T pe = ppe.value[g];
      gk.noalias() = G * k;
      if (pv.requires_grad) vec(pv.ensure_grad().data() + g * dv, dv).noalias() += pw * gk;
      if (ppw.requires_grad) ppw.ensure_grad()[g] += v.dot(gk);
      if (ppe.requires_grad) ppe.ensure_grad()[g] -= u.dot(gk);
      if (pk.requires_grad) {
        const Vec<T> w = pw * v - pe * u;
        vec(pk.ensure_grad().data() + g * dk, dk).noalias() += G.transpose() * w - pe * (M.transpose() * gk);
      }
      if (pm.requires_grad) {
        auto dM = mat(pm.ensure_grad().data() + g * dv * dk, dv, dk);
        dM += G;
        dM.noalias() -= pe * gk * k.transpose();
      }
    }
  });
}

template <typename T>
MemoryMatrix<T>::MemoryMatrix(std::size_t value_dim, std::size_t key_dim)
    : matrix_(Tensor<T>::zeros({value_dim, key_dim})), value_dim_(value_dim), key_dim_(key_dim) {}

template <typename T>
MemoryMatrix<T>::MemoryMatrix(Tensor<T> matrix) : matrix_(std::move(matrix)) {
  if (matrix_.rank() != 2) throw std::invalid_argument("MemoryMatrix: expected [d_v, d_k], got " + shape_str(matrix_.shape()));
  for (T v : matrix_.data())
    if (!std::isfinite(v)) throw std::invalid_argument("MemoryMatrix: non-finite entry");
  value_dim_ = matrix_.dim(0);
  key_dim_ = matrix_.dim(1);
}

template <typename T>
Tensor<T> rd(const MemoryMatrix<T>& memory, const Tensor<T>& query, const Tensor<T>& p_read) {
  return nam_read(memory.tensor(), query, p_read);
}

template <typename T>
Tensor<T> rd(const MemoryMatrix<T>& memory, const Tensor<T>& query, T p_read) {
  return nam_read(memory.tensor(), query, Tensor<T>::scalar(p_read));
}

template <typename T>
MemoryMatrix<T> wr(const MemoryMatrix<T>& memory, const Tensor<T>& key, const Tensor<T>& value,
                   const Tensor<T>& p_write, const Tensor<T>& p_erase) {
  return MemoryMatrix<T>(nam_write(memory.tensor(), key, value, p_write, p_erase));
}

template <typename T>
MemoryMatrix<T> wr(const MemoryMatrix<T>& memory, const Tensor<T>& key, const Tensor<T>& value, T p_write, T p_erase) {
  return wr(memory, key, value, Tensor<T>::scalar(p_write), Tensor<T>::scalar(p_erase));
}

template <typename T>
MemoryMatrix<T> wr(const MemoryMatrix<T>& memory, const KeyedWrite<T>& write) {
  return wr(memory, write.key, write.value, write.p_write, write.p_erase);
}

#define NAMLAB_MEMORY(T)                                                                                     \
  template Tensor<T> nam_read(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> nam_read_transposed(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> nam_write(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,        \
                               const Tensor<T>&);                                                             \
  template class MemoryMatrix<T>;                                                                             \
  template Tensor<T> rd(const MemoryMatrix<T>&, const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> rd(const MemoryMatrix<T>&, const Tensor<T>&, T);                                         \
  template MemoryMatrix<T> wr(const MemoryMatrix<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,   \
                              const Tensor<T>&);                                                              \
  template MemoryMatrix<T> wr(const MemoryMatrix<T>&, const Tensor<T>&, const Tensor<T>&, T, T);              \
  template MemoryMatrix<T> wr(const MemoryMatrix<T>&, const KeyedWrite<T>&);

NAMLAB_MEMORY(float)
NAMLAB_MEMORY(double)

}  // namespace namlab
