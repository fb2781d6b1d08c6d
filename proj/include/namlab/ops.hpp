// Differentiable operation vocabulary.
//
// Shapes are checked eagerly; a mismatch throws std::invalid_argument naming
// both operand shapes. "Last axis" operations treat the tensor as a stack of
// rows of length shape.back().
#pragma once

#include <span>
#include <vector>

#include "namlab/tensor.hpp"

namespace namlab {

// Elementwise, identical shapes.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& x, T factor);

// x[..., n] + b[n]
template <typename T> Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& b);
// x[N, ...] with every slab i multiplied by s[i]; s has shape [N].
template <typename T> Tensor<T> scale_rows(const Tensor<T>& x, const Tensor<T>& s);

// a[m,k] * b[k,n]
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// A[m,n] * x[n]
template <typename T> Tensor<T> matvec(const Tensor<T>& a, const Tensor<T>& x);
// u[m] * v[n]^T
template <typename T> Tensor<T> outer(const Tensor<T>& u, const Tensor<T>& v);
template <typename T> Tensor<T> transpose(const Tensor<T>& a);
// x[N,in] * W[out,in]^T (+ b[out]); b may be undefined.
template <typename T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

// Last-axis concatenation / slicing [begin, end).
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts);
template <typename T> Tensor<T> slice(const Tensor<T>& x, std::size_t begin, std::size_t end);
// First-axis concatenation / slicing / gathering.
template <typename T> Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts);
template <typename T> Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t end);
template <typename T> Tensor<T> gather_rows(const Tensor<T>& x, std::span<const int> rows);
template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);

template <typename T> Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T> Tensor<T> tanh(const Tensor<T>& x);
template <typename T> Tensor<T> relu(const Tensor<T>& x);
// tanh approximation
template <typename T> Tensor<T> gelu(const Tensor<T>& x);
template <typename T> Tensor<T> softmax(const Tensor<T>& x);
// x / max(|x|, eps) along the last axis; exact unit rows above eps, zero stays zero.
template <typename T> Tensor<T> l2_normalize(const Tensor<T>& x, T eps = T(1e-8));
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5));

// Circular shift along the last axis: out[i] = x[(i - shift) mod n].
template <typename T> Tensor<T> roll(const Tensor<T>& x, long shift);

// table[V,d] rows selected by ids.
template <typename T> Tensor<T> embedding(const Tensor<T>& table, std::span<const int> ids);

// Mean token cross-entropy over rows with mask != 0. logits [N,V].
template <typename T>
Tensor<T> masked_cross_entropy(const Tensor<T>& logits, std::span<const int> targets,
                               std::span<const unsigned char> mask);

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);

}  // namespace namlab
