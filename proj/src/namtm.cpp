#include "namlab/namtm.hpp"

#include <cmath>
#include <stdexcept>

#include "namlab/memory.hpp"
#include "namlab/ops.hpp"

namespace namlab {

namespace {

template <typename T>
Tensor<T> column(const Tensor<T>& m, std::size_t j) {
  return reshape(slice(m, j, j + 1), {m.dim(0)});
}

}  // namespace

template <typename T>
Tensor<T> roll_head(const Tensor<T>& head, int direction) {
  if (direction != 1 && direction != -1) throw std::invalid_argument("roll_head: direction must be +1 or -1");
  return roll(head, direction);
}

template <typename T>
Tensor<T> move_head(const Tensor<T>& head, const Tensor<T>& actions, const Tensor<T>& jump_target) {
  if (head.rank() != 2 || actions.rank() != 2 || actions.dim(0) != head.dim(0) ||
      (actions.dim(1) != 3 && actions.dim(1) != 4)) {
    throw std::invalid_argument("move_head: head " + shape_str(head.shape()) + " vs actions " +
                                shape_str(actions.shape()));
  }
  const auto r = static_cast<std::size_t>(HeadAction::right);
  const auto l = static_cast<std::size_t>(HeadAction::left);
  const auto n = static_cast<std::size_t>(HeadAction::noop);
  auto out = add(add(scale_rows(roll_head(head, +1), column(actions, r)),
                     scale_rows(roll_head(head, -1), column(actions, l))),
                 scale_rows(head, column(actions, n)));
  if (actions.dim(1) == 4) {
    if (!jump_target.defined() || jump_target.shape() != head.shape()) {
      throw std::invalid_argument("move_head: jump action needs a jump target shaped like the head " +
                                  shape_str(head.shape()));
    }
    out = add(out, scale_rows(jump_target, column(actions, static_cast<std::size_t>(HeadAction::jump))));
  }
  return out;
}

template <typename T>
NamTmParams<T> NamTmParams<T>::create(ParameterSet<T>& params, const std::string& prefix, std::size_t input_dim,
                                      std::size_t width, std::size_t hidden, bool jump, std::mt19937_64& rng) {
  NamTmParams p;
  p.input_dim = input_dim;
  p.width = width;
  p.hidden = hidden;
  p.jump = jump;
  const std::size_t outputs = 2 + 2 * p.actions() + (jump ? width : 0);
  p.ctrl_w1 = params.add(prefix + ".ctrl.w1", fan_in_uniform<T>({hidden, input_dim}, rng));
  p.ctrl_b1 = params.add(prefix + ".ctrl.b1", Tensor<T>::zeros({hidden}));
  p.ctrl_w2 = params.add(prefix + ".ctrl.w2", fan_in_uniform<T>({outputs, hidden}, rng));
  p.ctrl_b2 = params.add(prefix + ".ctrl.b2", Tensor<T>::zeros({outputs}));
  p.w_value = params.add(prefix + ".w_value", fan_in_uniform<T>({width, input_dim}, rng));
  if (jump) p.w_key = params.add(prefix + ".w_key", fan_in_uniform<T>({width, input_dim}, rng));
  return p;
}

template <typename T>
TapeMachineState<T> TapeMachineState<T>::initial(std::size_t batch, std::size_t width, std::size_t tape_length) {
  if (tape_length == 0) throw std::invalid_argument("namtm: tape length must be positive");
  std::vector<T> head(batch * tape_length, T(0));
  for (std::size_t b = 0; b < batch; ++b) head[b * tape_length] = T(1);
  return {Tensor<T>::zeros({batch, width, tape_length}), Tensor<T>::zeros({batch, width, tape_length}),
          Tensor<T>::from_data({batch, tape_length}, head), Tensor<T>::from_data({batch, tape_length}, head)};
}

template <typename T>
ControllerOutputs<T> namtm_control(const NamTmParams<T>& params, const Tensor<T>& x) {
  const std::size_t A = params.actions();
  const auto hidden = tanh(linear(x, params.ctrl_w1, params.ctrl_b1));
  const auto out = linear(hidden, params.ctrl_w2, params.ctrl_b2);
  ControllerOutputs<T> c;
  c.p_read = sigmoid(column(out, 0));
  c.p_write = sigmoid(column(out, 1));
  c.read_actions = softmax(slice(out, 2, 2 + A));
  c.write_actions = softmax(slice(out, 2 + A, 2 + 2 * A));
  if (params.jump) c.jump_query = l2_normalize(slice(out, 2 + 2 * A, 2 + 2 * A + params.width));
  return c;
}

template <typename T>
NamTmStep<T> namtm_step(const NamTmParams<T>& params, const TapeMachineState<T>& state, const Tensor<T>& x,
                        const ControllerOutputs<T>& controls) {
  if (x.rank() != 2 || x.dim(1) != params.input_dim) {
    throw std::invalid_argument("namtm_step: input " + shape_str(x.shape()) + " does not match layer input dim " +
                                std::to_string(params.input_dim));
  }
  const std::size_t B = x.dim(0);
  if (state.value_tape.rank() != 3 || state.value_tape.dim(0) != B || state.value_tape.dim(1) != params.width) {
    throw std::invalid_argument("namtm_step: tape " + shape_str(state.value_tape.shape()) + " vs input " +
                                shape_str(x.shape()));
  }
  NamTmStep<T> step;
  step.controls = controls;
  step.read = nam_read(state.value_tape, state.read_head, controls.p_read);

  const auto value = linear(x, params.w_value, Tensor<T>());
  step.state.value_tape = nam_write(state.value_tape, state.write_head, value, controls.p_write, controls.p_write);

  Tensor<T> jump_target;
  if (params.jump) {
    const auto key = l2_normalize(linear(x, params.w_key, Tensor<T>()));
    step.state.key_tape = nam_write(state.key_tape, state.write_head, key, controls.p_write, controls.p_write);
    jump_target = nam_read_transposed(step.state.key_tape, controls.jump_query, Tensor<T>());
  } else {
    step.state.key_tape = state.key_tape;
  }
  step.state.read_head = move_head(state.read_head, controls.read_actions, jump_target);
  step.state.write_head = move_head(state.write_head, controls.write_actions, jump_target);
  return step;
}

template <typename T>
NamTmStep<T> namtm_step(const NamTmParams<T>& params, const TapeMachineState<T>& state, const Tensor<T>& x) {
  return namtm_step(params, state, x, namtm_control(params, x));
}

template <typename T>
NamTmModel<T>::NamTmModel(const NamTmConfig& config, std::uint64_t seed) : config_(config) {
  if (config.layers == 0) throw std::invalid_argument("namtm: at least one layer required");
  if (config.tape_length == 0 && !(config.tape_factor >= 2.0)) {
    throw std::invalid_argument("namtm: tape_factor must be at least 2");
  }
  std::mt19937_64 rng(seed);
  embedding_ = params_.add("embedding", uniform_tensor<T>({config.vocab, config.d}, T(std::sqrt(3.0)), rng));
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::size_t in = l == 0 ? config.d : 2 * config.d;
    layers_.push_back(NamTmParams<T>::create(params_, "layer" + std::to_string(l), in, config.d,
                                             config.controller_hidden, config.jump, rng));
  }
  const std::size_t feat = config.d + layers_.back().input_dim;
  proj_w_ = params_.add("proj.w", fan_in_uniform<T>({config.vocab, feat}, rng));
  proj_b_ = params_.add("proj.b", Tensor<T>::zeros({config.vocab}));
}

template <typename T>
std::size_t NamTmModel<T>::tape_length_for(std::size_t sequence_length) const {
  if (config_.tape_length == 0) {
    return static_cast<std::size_t>(std::ceil(config_.tape_factor * static_cast<double>(sequence_length)));
  }
  if (2 * sequence_length > config_.tape_length) {
    throw std::invalid_argument("namtm: sequence of length " + std::to_string(sequence_length) +
                                " exceeds half the tape (L = " + std::to_string(config_.tape_length) +
                                "); set tape_length to at least " + std::to_string(2 * sequence_length));
  }
  return config_.tape_length;
}

template <typename T>
Tensor<T> NamTmModel<T>::forward(const TokenBatch& tokens) {
  return forward_with_tape(tokens, tape_length_for(tokens.length));
}

template <typename T>
Tensor<T> NamTmModel<T>::forward_with_tape(const TokenBatch& tokens, std::size_t tape_length) {
  if (tokens.length == 0 || tokens.batch == 0) throw std::invalid_argument("namtm: empty sequence");
  if (2 * tokens.length > tape_length) {
    throw std::invalid_argument("namtm: sequence of length " + std::to_string(tokens.length) +
                                " exceeds half the tape (L = " + std::to_string(tape_length) + ")");
  }
  const std::size_t B = tokens.batch, S = tokens.length;
  std::vector<Tensor<T>> emb(S);
  for (std::size_t t = 0; t < S; ++t) emb[t] = embedding(embedding_, tokens.column(t));

  std::vector<Tensor<T>> inputs = emb;
  std::vector<Tensor<T>> reads(S);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (l > 0)
      for (std::size_t t = 0; t < S; ++t) inputs[t] = concat<T>({reads[t], emb[t]});
    auto state = TapeMachineState<T>::initial(B, config_.d, tape_length);
    for (std::size_t t = 0; t < S; ++t) {
      auto step = namtm_step(layers_[l], state, inputs[t]);
      reads[t] = std::move(step.read);
      state = std::move(step.state);
    }
  }
  std::vector<Tensor<T>> features(S);
  for (std::size_t t = 0; t < S; ++t) features[t] = concat<T>({reads[t], inputs[t]});
  auto logits = linear(concat_rows(features), proj_w_, proj_b_);
  return time_major_to_batch_major(logits, B, S);
}

#define NAMLAB_NAMTM(T)                                                                                        \
  template Tensor<T> roll_head(const Tensor<T>&, int);                                                          \
  template Tensor<T> move_head(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                           \
  template struct NamTmParams<T>;                                                                               \
  template struct TapeMachineState<T>;                                                                          \
  template ControllerOutputs<T> namtm_control(const NamTmParams<T>&, const Tensor<T>&);                         \
  template NamTmStep<T> namtm_step(const NamTmParams<T>&, const TapeMachineState<T>&, const Tensor<T>&);        \
  template NamTmStep<T> namtm_step(const NamTmParams<T>&, const TapeMachineState<T>&, const Tensor<T>&,         \
                                   const ControllerOutputs<T>&);                                                \
  template class NamTmModel<T>;

NAMLAB_NAMTM(float)
NAMLAB_NAMTM(double)

}  // namespace namlab
