#include "namlab/lsam.hpp"

#include <cmath>
#include <stdexcept>

#include "namlab/memory.hpp"
#include "namlab/ops.hpp"

namespace namlab {

template <typename T>
LsamCellParams<T> LsamCellParams<T>::create(ParameterSet<T>& params, const std::string& prefix, std::size_t input_dim,
                                            std::size_t width, std::size_t heads, std::mt19937_64& rng) {
  if (heads == 0 || width % heads != 0) {
    throw std::invalid_argument("lsam: width " + std::to_string(width) + " not divisible by " + std::to_string(heads) +
                                " heads");
  }
  LsamCellParams cell;
  cell.input_dim = input_dim;
  cell.width = width;
  cell.heads = heads;
  const std::size_t in = input_dim + width;
  cell.w_qkv = params.add(prefix + ".w_qkv", fan_in_uniform<T>({3 * width, in}, rng));
  cell.b_qkv = params.add(prefix + ".b_qkv", Tensor<T>::zeros({3 * width}));
  cell.w_rw = params.add(prefix + ".w_rw", fan_in_uniform<T>({2 * heads, in}, rng));
  cell.b_rw = params.add(prefix + ".b_rw", Tensor<T>::zeros({2 * heads}));
  return cell;
}

template <typename T>
LsamState<T> LsamState<T>::zeros(const LsamCellParams<T>& cell, std::size_t batch) {
  const std::size_t dh = cell.head_dim();
  return {Tensor<T>::zeros({batch * cell.heads, dh, dh}), Tensor<T>::zeros({batch, cell.width})};
}

template <typename T>
LsamState<T> lsam_step(const LsamCellParams<T>& cell, const LsamState<T>& state, const Tensor<T>& x,
                       LsamGates<T>* gates) {
  if (x.rank() != 2 || x.dim(1) != cell.input_dim) {
    throw std::invalid_argument("lsam_step: input " + shape_str(x.shape()) + " does not match cell input dim " +
                                std::to_string(cell.input_dim));
  }
  const std::size_t B = x.dim(0);
  const std::size_t H = cell.heads;
  const std::size_t w = cell.width;
  const std::size_t dh = cell.head_dim();
  if (state.hidden.shape() != Shape{B, w}) {
    throw std::invalid_argument("lsam_step: hidden state " + shape_str(state.hidden.shape()) + " vs input " +
                                shape_str(x.shape()));
  }
  if (state.memory.shape() != Shape{B * H, dh, dh}) {
    throw std::invalid_argument("lsam_step: memory " + shape_str(state.memory.shape()) + " does not match " +
                                std::to_string(H) + " heads of dim " + std::to_string(dh));
  }

  const auto z = concat<T>({x, state.hidden});
  const auto qkv = linear(z, cell.w_qkv, cell.b_qkv);
  const auto q = reshape(slice(qkv, 0, w), {B * H, dh});
  const auto k = reshape(slice(qkv, w, 2 * w), {B * H, dh});
  const auto v = reshape(slice(qkv, 2 * w, 3 * w), {B * H, dh});
  const auto probs = sigmoid(linear(z, cell.w_rw, cell.b_rw));
  const auto p_read = slice(probs, 0, H);
  const auto p_write = slice(probs, H, 2 * H);
  if (gates) *gates = {p_read, p_write};

  const auto pw = reshape(p_write, {B * H});
  // Erase probability equals write probability.
  auto memory = nam_write(state.memory, l2_normalize(k), v, pw, pw);
  auto read = nam_read(memory, l2_normalize(q), reshape(p_read, {B * H}));
  return {std::move(memory), reshape(read, {B, w})};
}

template <typename T>
std::vector<Tensor<T>> lsam_scan(const LsamCellParams<T>& cell, const std::vector<Tensor<T>>& inputs, bool reverse) {
  if (inputs.empty()) throw std::invalid_argument("lsam_scan: empty sequence");
  const std::size_t S = inputs.size();
  std::vector<Tensor<T>> out(S);
  auto state = LsamState<T>::zeros(cell, inputs[0].dim(0));
  for (std::size_t i = 0; i < S; ++i) {
    const std::size_t t = reverse ? S - 1 - i : i;
    state = lsam_step(cell, state, inputs[t]);
    out[t] = state.hidden;
  }
  return out;
}

template <typename T>
LsamModel<T>::LsamModel(const LsamConfig& config, std::uint64_t seed) : config_(config) {
  if (config.layers == 0) throw std::invalid_argument("lsam: at least one layer required");
  if (config.bidirectional && (config.heads % 2 != 0 || config.d % 2 != 0)) {
    throw std::invalid_argument("lsam: bidirectional model needs an even head count and width");
  }
  if (config.d % config.heads != 0) {
    throw std::invalid_argument("lsam: width " + std::to_string(config.d) + " not divisible by " +
                                std::to_string(config.heads) + " heads");
  }
  std::mt19937_64 rng(seed);
  embedding_ = params_.add("embedding", uniform_tensor<T>({config.vocab, config.d}, T(std::sqrt(3.0)), rng));
  const std::size_t dir_width = config.bidirectional ? config.d / 2 : config.d;
  const std::size_t dir_heads = config.bidirectional ? config.heads / 2 : config.heads;
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string p = "layer" + std::to_string(l);
    Layer layer;
    layer.forward_cell = LsamCellParams<T>::create(params_, p + ".fwd", config.d, dir_width, dir_heads, rng);
    if (config.bidirectional) {
      layer.backward_cell = LsamCellParams<T>::create(params_, p + ".bwd", config.d, dir_width, dir_heads, rng);
    }
    layers_.push_back(std::move(layer));
  }
  proj_w_ = params_.add("proj.w", fan_in_uniform<T>({config.vocab, config.d}, rng));
  proj_b_ = params_.add("proj.b", Tensor<T>::zeros({config.vocab}));
}

template <typename T>
Tensor<T> LsamModel<T>::forward(const TokenBatch& tokens) {
  if (tokens.length == 0 || tokens.batch == 0) throw std::invalid_argument("lsam: empty sequence");
  const std::size_t B = tokens.batch, S = tokens.length;
  std::vector<Tensor<T>> seq(S);
  for (std::size_t t = 0; t < S; ++t) seq[t] = embedding(embedding_, tokens.column(t));
  for (const auto& layer : layers_) {
    auto fwd = lsam_scan(layer.forward_cell, seq, false);
    if (config_.bidirectional) {
      auto bwd = lsam_scan(layer.backward_cell, seq, true);
      for (std::size_t t = 0; t < S; ++t) seq[t] = concat<T>({fwd[t], bwd[t]});
    } else {
      seq = std::move(fwd);
    }
  }
  auto logits = linear(concat_rows(seq), proj_w_, proj_b_);
  return time_major_to_batch_major(logits, B, S);
}

template struct LsamCellParams<float>;
template struct LsamCellParams<double>;
template struct LsamState<float>;
template struct LsamState<double>;
template LsamState<float> lsam_step(const LsamCellParams<float>&, const LsamState<float>&, const Tensor<float>&,
                                    LsamGates<float>*);
template LsamState<double> lsam_step(const LsamCellParams<double>&, const LsamState<double>&, const Tensor<double>&,
                                     LsamGates<double>*);
template std::vector<Tensor<float>> lsam_scan(const LsamCellParams<float>&, const std::vector<Tensor<float>>&, bool);
template std::vector<Tensor<double>> lsam_scan(const LsamCellParams<double>&, const std::vector<Tensor<double>>&, bool);
template class LsamModel<float>;
template class LsamModel<double>;

}  // namespace namlab
