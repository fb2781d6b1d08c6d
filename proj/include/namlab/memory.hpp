// Neural attention memory: a d_v x d_k matrix read by p_r * M q and written by
//
//   WR(M, k, v, p_w, p_e) = M + p_w v k^T - p_e (M k) k^T
//
// With a unit key and p_w = p_e = 1 the write replaces whatever value was
// associated with k, so a following read with the same key returns v.
//
// Keys are used exactly as given. Callers that need the round-trip property
// must pass unit vectors (normally produced by l2_normalize).
#pragma once

#include <cstddef>

#include "namlab/tensor.hpp"

namespace namlab {

// Batched kernels. `memory` is [G..., d_v, d_k] for any number of leading
// group axes G...; vectors carry the same leading axes and probabilities have
// shape [G...] (a rank-0 tensor when there are none). An undefined
// probability tensor means p = 1. Probabilities must lie in [0, 1].

// p * M q  -> [G..., d_v]
template <typename T>
Tensor<T> nam_read(const Tensor<T>& memory, const Tensor<T>& query, const Tensor<T>& prob);

// p * M^T q  -> [G..., d_k]; q has length d_v. Reads a key tape as a jump table.
template <typename T>
Tensor<T> nam_read_transposed(const Tensor<T>& memory, const Tensor<T>& query, const Tensor<T>& prob);

// M + p_w v k^T - p_e (M k) k^T  -> [G..., d_v, d_k]. The input is not modified.
template <typename T>
Tensor<T> nam_write(const Tensor<T>& memory, const Tensor<T>& key, const Tensor<T>& value,
                    const Tensor<T>& p_write, const Tensor<T>& p_erase);

template <typename T>
class MemoryMatrix {
 public:
  MemoryMatrix(std::size_t value_dim, std::size_t key_dim);
  // Adopts an existing [d_v, d_k] tensor; entries must be finite.
  explicit MemoryMatrix(Tensor<T> matrix);

  std::size_t value_dim() const { return value_dim_; }
  std::size_t key_dim() const { return key_dim_; }
  const Tensor<T>& tensor() const { return matrix_; }

 private:
  Tensor<T> matrix_;
  std::size_t value_dim_;
  std::size_t key_dim_;
};

template <typename T>
struct KeyedWrite {
  Tensor<T> key;       // [d_k], unit
  Tensor<T> value;     // [d_v]
  Tensor<T> p_write;   // rank 0
  Tensor<T> p_erase;   // rank 0
};

template <typename T>
Tensor<T> rd(const MemoryMatrix<T>& memory, const Tensor<T>& query, const Tensor<T>& p_read);
template <typename T>
Tensor<T> rd(const MemoryMatrix<T>& memory, const Tensor<T>& query, T p_read = T(1));

template <typename T>
MemoryMatrix<T> wr(const MemoryMatrix<T>& memory, const Tensor<T>& key, const Tensor<T>& value,
                   const Tensor<T>& p_write, const Tensor<T>& p_erase);
template <typename T>
MemoryMatrix<T> wr(const MemoryMatrix<T>& memory, const Tensor<T>& key, const Tensor<T>& value,
                   T p_write = T(1), T p_erase = T(1));
template <typename T>
MemoryMatrix<T> wr(const MemoryMatrix<T>& memory, const KeyedWrite<T>& write);

}  // namespace namlab
