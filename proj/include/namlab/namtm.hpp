// NAM Turing machine.
//
// The tape is a memory matrix T = sum_i v_i e_i^T (d x L) addressed by
// positional head vectors in R^L. A parallel key tape K = sum_i k_i e_i^T
// stores unit keys; reading K^T with a query returns a position, so the key
// tape doubles as a jump table. Per step:
//
//   R    = RD(T, H_r, p_r)
//   T'   = WR(T, H_w, W_v x, p_w, p_w)
//   K'   = WR(K, H_w, mu(W_k x), p_w, p_w)
//   H_j  = RD(K'^T, q_jump, 1)
//   H'   = p_noop H + p_left roll^-1(H) + p_right roll(H) + p_jump H_j     (each head)
//
// No parameter depends on the tape length L.
#pragma once

#include <cstddef>
#include <random>
#include <string>

#include "namlab/model.hpp"
#include "namlab/optim.hpp"

namespace namlab {

// Column order of head action distributions.
enum class HeadAction : std::size_t { right = 0, left = 1, noop = 2, jump = 3 };

// Circular shift of a head: direction +1 maps e_i to e_{i+1} (e_L wraps to e_1).
template <typename T>
Tensor<T> roll_head(const Tensor<T>& head, int direction);

// Mixes a [B, L] head by [B, A] action probabilities (A = 3 without jump, 4 with).
template <typename T>
Tensor<T> move_head(const Tensor<T>& head, const Tensor<T>& actions, const Tensor<T>& jump_target);

template <typename T>
struct NamTmParams {
  // nn_control: tanh hidden layer, then one linear map to all controller outputs.
  Tensor<T> ctrl_w1;  // [hidden, input_dim]
  Tensor<T> ctrl_b1;  // [hidden]
  Tensor<T> ctrl_w2;  // [2 + 2 * actions + (jump ? width : 0), hidden]
  Tensor<T> ctrl_b2;
  Tensor<T> w_value;  // [width, input_dim]
  Tensor<T> w_key;    // [width, input_dim]; undefined without jump
  std::size_t input_dim = 0;
  std::size_t width = 0;
  std::size_t hidden = 0;
  bool jump = true;

  std::size_t actions() const { return jump ? 4 : 3; }

  static NamTmParams create(ParameterSet<T>& params, const std::string& prefix, std::size_t input_dim,
                            std::size_t width, std::size_t hidden, bool jump, std::mt19937_64& rng);
};

template <typename T>
struct TapeMachineState {
  Tensor<T> value_tape;  // [B, d, L]
  Tensor<T> key_tape;    // [B, d, L]
  Tensor<T> read_head;   // [B, L]
  Tensor<T> write_head;  // [B, L]

  // T = K = 0, both heads at e_1.
  static TapeMachineState initial(std::size_t batch, std::size_t width, std::size_t tape_length);
  std::size_t tape_length() const { return read_head.dim(1); }
};

template <typename T>
struct ControllerOutputs {
  Tensor<T> p_read;         // [B]
  Tensor<T> p_write;        // [B]
  Tensor<T> read_actions;   // [B, A], softmax rows
  Tensor<T> write_actions;  // [B, A]
  Tensor<T> jump_query;     // [B, d] unit rows; undefined without jump
};

template <typename T>
ControllerOutputs<T> namtm_control(const NamTmParams<T>& params, const Tensor<T>& x);

template <typename T>
struct NamTmStep {
  Tensor<T> read;  // [B, d]
  TapeMachineState<T> state;
  ControllerOutputs<T> controls;
};

template <typename T>
NamTmStep<T> namtm_step(const NamTmParams<T>& params, const TapeMachineState<T>& state, const Tensor<T>& x);

// Same transition with externally supplied controller outputs.
template <typename T>
NamTmStep<T> namtm_step(const NamTmParams<T>& params, const TapeMachineState<T>& state, const Tensor<T>& x,
                        const ControllerOutputs<T>& controls);

struct NamTmConfig {
  std::size_t vocab = 13;
  std::size_t d = 64;
  std::size_t layers = 2;
  std::size_t controller_hidden = 64;
  bool jump = true;
  double tape_factor = 2.0;     // L = ceil(tape_factor * sequence length) ...
  std::size_t tape_length = 0;  // ... or this fixed length when nonzero
};

// Embedding -> stacked NAM-TM layers -> linear projection.
// Layer 1 reads the embedding; every later layer reads [R_prev : embedding].
// Logits are a projection of the top layer's read concatenated with that
// layer's input: reads see the tape before the current write, so the input
// path is what lets position t depend on token t.
template <typename T>
class NamTmModel final : public SequenceModel<T> {
 public:
  NamTmModel(const NamTmConfig& config, std::uint64_t seed);

  Tensor<T> forward(const TokenBatch& tokens) override;
  ParameterSet<T>& parameters() override { return params_; }
  const ParameterSet<T>& parameters() const override { return params_; }
  std::size_t vocab_size() const override { return config_.vocab; }
  const NamTmConfig& config() const { return config_; }

  // Tape length used for a sequence of the given length; throws if the
  // sequence exceeds half of a fixed tape.
  std::size_t tape_length_for(std::size_t sequence_length) const;
  // Forward with an explicit tape length (must be >= 2 * length).
  Tensor<T> forward_with_tape(const TokenBatch& tokens, std::size_t tape_length);

  const std::vector<NamTmParams<T>>& layers() const { return layers_; }
  const Tensor<T>& embedding_table() const { return embedding_; }
  const Tensor<T>& projection_weight() const { return proj_w_; }
  const Tensor<T>& projection_bias() const { return proj_b_; }

 private:
  NamTmConfig config_;
  ParameterSet<T> params_;
  Tensor<T> embedding_;
  std::vector<NamTmParams<T>> layers_;
  Tensor<T> proj_w_;
  Tensor<T> proj_b_;
};

}  // namespace namlab
