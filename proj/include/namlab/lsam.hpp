// Long short-term attention memory: an LSTM-shaped recurrent cell whose cell
// state is a set of per-head memory matrices.
//
//   [q:k:v]   = W_qkv [x_t : h_{t-1}] + b_qkv
//   [p_r:p_w] = sigmoid(W_rw [x_t : h_{t-1}] + b_rw)        (one pair per head)
//   M_t^i     = WR(M_{t-1}^i, mu(k^i), v^i, p_w^i, p_w^i)
//   h_t^i     = RD(M_t^i, mu(q^i), p_r^i)
//
// h_t is the concatenation of the per-head reads; M_0 = 0 and h_0 = 0.
#pragma once

#include <cstddef>
#include <random>
#include <string>

#include "namlab/model.hpp"
#include "namlab/optim.hpp"

namespace namlab {

template <typename T>
struct LsamCellParams {
  Tensor<T> w_qkv;  // [3 * width, input_dim + width]
  Tensor<T> b_qkv;  // [3 * width]
  Tensor<T> w_rw;   // [2 * heads, input_dim + width]; rows [0, heads) read, [heads, 2 heads) write
  Tensor<T> b_rw;   // [2 * heads]
  std::size_t input_dim = 0;
  std::size_t width = 0;
  std::size_t heads = 0;

  std::size_t head_dim() const { return width / heads; }

  // Registers the four tensors as <prefix>.w_qkv etc.
  static LsamCellParams create(ParameterSet<T>& params, const std::string& prefix, std::size_t input_dim,
                               std::size_t width, std::size_t heads, std::mt19937_64& rng);
};

template <typename T>
struct LsamState {
  Tensor<T> memory;  // [batch * heads, head_dim, head_dim]
  Tensor<T> hidden;  // [batch, width]

  static LsamState zeros(const LsamCellParams<T>& cell, std::size_t batch);
  std::size_t batch() const { return hidden.dim(0); }
  // Reals held per sample: heads * head_dim^2 + width.
  std::size_t reals_per_sample() const { return (memory.size() + hidden.size()) / batch(); }
};

template <typename T>
struct LsamGates {
  Tensor<T> p_read;   // [batch, heads]
  Tensor<T> p_write;  // [batch, heads]
};

// x is [batch, input_dim]. When gates is non-null it receives the step's probabilities.
template <typename T>
LsamState<T> lsam_step(const LsamCellParams<T>& cell, const LsamState<T>& state, const Tensor<T>& x,
                       LsamGates<T>* gates = nullptr);

// Runs the cell over a [length] sequence of [batch, input_dim] inputs, left to
// right or right to left; returns the hidden state at each position.
template <typename T>
std::vector<Tensor<T>> lsam_scan(const LsamCellParams<T>& cell, const std::vector<Tensor<T>>& inputs,
                                 bool reverse);

struct LsamConfig {
  std::size_t vocab = 13;
  std::size_t d = 64;
  std::size_t heads = 8;
  std::size_t layers = 2;
  bool bidirectional = true;
};

// Token embedding -> stacked LSAM layers -> linear projection to the vocabulary.
// A bidirectional layer gives half of the heads (and half of the width) to a
// right-to-left scan; the two directions are concatenated per position.
template <typename T>
class LsamModel final : public SequenceModel<T> {
 public:
  LsamModel(const LsamConfig& config, std::uint64_t seed);

  Tensor<T> forward(const TokenBatch& tokens) override;
  ParameterSet<T>& parameters() override { return params_; }
  const ParameterSet<T>& parameters() const override { return params_; }
  std::size_t vocab_size() const override { return config_.vocab; }
  const LsamConfig& config() const { return config_; }

  struct Layer {
    LsamCellParams<T> forward_cell;
    LsamCellParams<T> backward_cell;  // unused when unidirectional
  };
  const std::vector<Layer>& layers() const { return layers_; }
  const Tensor<T>& embedding_table() const { return embedding_; }
  const Tensor<T>& projection_weight() const { return proj_w_; }
  const Tensor<T>& projection_bias() const { return proj_b_; }

 private:
  LsamConfig config_;
  ParameterSet<T> params_;
  Tensor<T> embedding_;
  std::vector<Layer> layers_;
  Tensor<T> proj_w_;
  Tensor<T> proj_b_;
};

}  // namespace namlab
