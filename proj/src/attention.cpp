#include "namlab/attention.hpp"

#include <cmath>
#include <stdexcept>

#include "namlab/ops.hpp"

namespace namlab {

template <typename T>
void AttentionBatch<T>::validate() const {
  if (!queries.defined() || !keys.defined() || !values.defined()) {
    throw std::invalid_argument("attention: queries, keys and values are required");
  }
  if (queries.rank() != 2 || keys.rank() != 2 || values.rank() != 2) {
    throw std::invalid_argument("attention: expected rank-2 operands, got Q " + shape_str(queries.shape()) + ", K " +
                                shape_str(keys.shape()) + ", V " + shape_str(values.shape()));
  }
  if (queries.dim(0) == 0) throw std::invalid_argument("attention: empty sequence (S = 0)");
  if (keys.dim(0) != queries.dim(0) || values.dim(0) != queries.dim(0) || keys.dim(1) != queries.dim(1)) {
    throw std::invalid_argument("attention: Q " + shape_str(queries.shape()) + ", K " + shape_str(keys.shape()) +
                                ", V " + shape_str(values.shape()) + " do not conform");
  }
}

template <typename T>
Tensor<T> noa_self_attention(const AttentionBatch<T>& batch, AttentionStats* stats) {
  batch.validate();
  const auto memory = matmul(transpose(batch.values), l2_normalize(batch.keys));  // [d_v, d_k]
  if (stats) stats->state_bytes = memory.size() * sizeof(T);
  return matmul(l2_normalize(batch.queries), transpose(memory));
}

template <typename T>
Tensor<T> sdp_attention(const AttentionBatch<T>& batch, T factor, AttentionStats* stats) {
  batch.validate();
  if (factor <= T(0)) factor = T(1) / std::sqrt(static_cast<T>(batch.queries.dim(1)));
  const auto scores = softmax(scale(matmul(batch.queries, transpose(batch.keys)), factor));
  if (stats) stats->state_bytes = scores.size() * sizeof(T);
  return matmul(scores, batch.values);
}

AttentionKind attention_kind_from_string(const std::string& name) {
  if (name == "noa") return AttentionKind::noa;
  if (name == "sdp") return AttentionKind::sdp;
  throw std::invalid_argument("unknown attention kind '" + name + "' (expected noa or sdp)");
}

std::string to_string(AttentionKind kind) { return kind == AttentionKind::noa ? "noa" : "sdp"; }

template <typename T>
Tensor<T> sinusoidal_positions(std::size_t length, std::size_t d) {
  std::vector<T> table(length * d);
  for (std::size_t p = 0; p < length; ++p) {
    for (std::size_t i = 0; i < d; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
      const double angle = static_cast<double>(p) * freq;
      table[p * d + i] = static_cast<T>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return Tensor<T>::from_data({length, d}, std::move(table));
}

template <typename T>
EncoderModel<T>::EncoderModel(const EncoderConfig& config, std::uint64_t seed) : config_(config) {
  if (config.heads == 0 || config.d % config.heads != 0) {
    throw std::invalid_argument("encoder: width " + std::to_string(config.d) + " not divisible by " +
                                std::to_string(config.heads) + " heads");
  }
  std::mt19937_64 rng(seed);
  const std::size_t d = config.d;
  embedding_ = params_.add("embedding", uniform_tensor<T>({config.vocab, d}, T(1), rng));
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string p = "block" + std::to_string(l) + ".";
    Block b;
    b.ln1_g = params_.add(p + "ln1.g", Tensor<T>::full({d}, T(1)));
    b.ln1_b = params_.add(p + "ln1.b", Tensor<T>::zeros({d}));
    b.wq = params_.add(p + "wq", fan_in_uniform<T>({d, d}, rng));
    b.wk = params_.add(p + "wk", fan_in_uniform<T>({d, d}, rng));
    b.wv = params_.add(p + "wv", fan_in_uniform<T>({d, d}, rng));
    b.wo = params_.add(p + "wo", fan_in_uniform<T>({d, d}, rng));
    b.bo = params_.add(p + "bo", Tensor<T>::zeros({d}));
    b.ln2_g = params_.add(p + "ln2.g", Tensor<T>::full({d}, T(1)));
    b.ln2_b = params_.add(p + "ln2.b", Tensor<T>::zeros({d}));
    b.w1 = params_.add(p + "ffn.w1", fan_in_uniform<T>({config.ffn, d}, rng));
    b.b1 = params_.add(p + "ffn.b1", Tensor<T>::zeros({config.ffn}));
    b.w2 = params_.add(p + "ffn.w2", fan_in_uniform<T>({d, config.ffn}, rng));
    b.b2 = params_.add(p + "ffn.b2", Tensor<T>::zeros({d}));
    blocks_.push_back(std::move(b));
  }
  proj_w_ = params_.add("proj.w", fan_in_uniform<T>({config.vocab, d}, rng));
  proj_b_ = params_.add("proj.b", Tensor<T>::zeros({config.vocab}));
}

template <typename T>
Tensor<T> EncoderModel<T>::block_forward(const Block& block, const Tensor<T>& x) const {
  const std::size_t H = config_.heads, dh = config_.d / H;
  const auto h = layer_norm(x, block.ln1_g, block.ln1_b);
  const auto q = linear(h, block.wq, Tensor<T>());
  const auto k = linear(h, block.wk, Tensor<T>());
  const auto v = linear(h, block.wv, Tensor<T>());
  std::vector<Tensor<T>> heads(H);
  for (std::size_t i = 0; i < H; ++i) {
    AttentionBatch<T> ab{slice(q, i * dh, (i + 1) * dh), slice(k, i * dh, (i + 1) * dh),
                         slice(v, i * dh, (i + 1) * dh)};
    heads[i] = config_.attention == AttentionKind::noa ? noa_self_attention(ab) : sdp_attention(ab);
  }
  auto y = add(x, linear(concat(heads), block.wo, block.bo));
  const auto f = linear(gelu(linear(layer_norm(y, block.ln2_g, block.ln2_b), block.w1, block.b1)), block.w2, block.b2);
  return add(y, f);
}

template <typename T>
Tensor<T> EncoderModel<T>::forward(const TokenBatch& tokens) {
  if (tokens.length == 0 || tokens.batch == 0) throw std::invalid_argument("encoder: empty sequence");
  const std::size_t S = tokens.length;
  const auto positions = sinusoidal_positions<T>(S, config_.d);
  std::vector<Tensor<T>> outputs(tokens.batch);
  for (std::size_t b = 0; b < tokens.batch; ++b) {
    const std::span<const int> ids(tokens.ids.data() + b * S, S);
    auto x = add(embedding(embedding_, ids), positions);
    for (const auto& block : blocks_) x = block_forward(block, x);
    outputs[b] = x;
  }
  return linear(concat_rows(outputs), proj_w_, proj_b_);
}

#define NAMLAB_ATTENTION(T)                                                              \
  template struct AttentionBatch<T>;                                                     \
  template Tensor<T> noa_self_attention(const AttentionBatch<T>&, AttentionStats*);      \
  template Tensor<T> sdp_attention(const AttentionBatch<T>&, T, AttentionStats*);        \
  template Tensor<T> sinusoidal_positions<T>(std::size_t, std::size_t);                  \
  template class EncoderModel<T>;

NAMLAB_ATTENTION(float)
NAMLAB_ATTENTION(double)

}  // namespace namlab
