// Normalized outer-product attention and the scaled dot-product reference.
//
// noa:  M = V^T mu(K)       (d_v x d_k, built once)
//       out_t = M mu(q_t)  = sum_s v_s (mu(k_s) . mu(q_t))
// sdp:  softmax(Q K^T * scale) V
#pragma once

#include <cstddef>
#include <random>
#include <string>

#include "namlab/model.hpp"
#include "namlab/optim.hpp"

namespace namlab {

template <typename T>
struct AttentionBatch {
  Tensor<T> queries;  // [S, d_k]
  Tensor<T> keys;     // [S, d_k]
  Tensor<T> values;   // [S, d_v]

  std::size_t length() const { return queries.dim(0); }
  void validate() const;
};

// Bytes of attention state materialized by the last call.
struct AttentionStats {
  std::size_t state_bytes = 0;
};

template <typename T>
Tensor<T> noa_self_attention(const AttentionBatch<T>& batch, AttentionStats* stats = nullptr);

// scale <= 0 selects 1/sqrt(d_k).
template <typename T>
Tensor<T> sdp_attention(const AttentionBatch<T>& batch, T scale = T(0), AttentionStats* stats = nullptr);

enum class AttentionKind { noa, sdp };

AttentionKind attention_kind_from_string(const std::string& name);
std::string to_string(AttentionKind kind);

struct EncoderConfig {
  std::size_t vocab = 13;
  std::size_t d = 64;
  std::size_t heads = 8;
  std::size_t layers = 2;
  std::size_t ffn = 128;
  AttentionKind attention = AttentionKind::noa;
};

// Sinusoidal position table [length, d].
template <typename T>
Tensor<T> sinusoidal_positions(std::size_t length, std::size_t d);

// Pre-norm encoder: x += MHA(LN(x)); x += FFN(LN(x)); logits = W x + b.
// A zero-layer encoder projects embedding + positions directly.
template <typename T>
class EncoderModel final : public SequenceModel<T> {
 public:
  EncoderModel(const EncoderConfig& config, std::uint64_t seed);

  Tensor<T> forward(const TokenBatch& tokens) override;
  ParameterSet<T>& parameters() override { return params_; }
  const ParameterSet<T>& parameters() const override { return params_; }
  std::size_t vocab_size() const override { return config_.vocab; }
  const EncoderConfig& config() const { return config_; }
  void set_attention(AttentionKind kind) { config_.attention = kind; }

  struct Block {
    Tensor<T> ln1_g, ln1_b, wq, wk, wv, wo, bo;
    Tensor<T> ln2_g, ln2_b, w1, b1, w2, b2;
  };
  const std::vector<Block>& blocks() const { return blocks_; }

  // One block applied to a single sequence x [S, d].
  Tensor<T> block_forward(const Block& block, const Tensor<T>& x) const;

 private:
  EncoderConfig config_;
  ParameterSet<T> params_;
  Tensor<T> embedding_;
  std::vector<Block> blocks_;
  Tensor<T> proj_w_;
  Tensor<T> proj_b_;
};

}  // namespace namlab
