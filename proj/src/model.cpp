#include "namlab/model.hpp"

#include <stdexcept>

#include "namlab/attention.hpp"
#include "namlab/lsam.hpp"
#include "namlab/namtm.hpp"
#include "namlab/ops.hpp"

namespace namlab {

std::vector<int> TokenBatch::column(std::size_t t) const {
  if (t >= length) throw std::out_of_range("TokenBatch::column: " + std::to_string(t) + " >= " + std::to_string(length));
  std::vector<int> out(batch);
  for (std::size_t b = 0; b < batch; ++b) out[b] = at(b, t);
  return out;
}

template <typename T>
Tensor<T> time_major_to_batch_major(const Tensor<T>& rows, std::size_t batch, std::size_t length) {
  if (rows.rank() != 2 || rows.dim(0) != batch * length) {
    throw std::invalid_argument("time_major_to_batch_major: rows " + shape_str(rows.shape()) + " vs batch " +
                                std::to_string(batch) + " x length " + std::to_string(length));
  }
  if (batch == 1) return rows;
  std::vector<int> order(batch * length);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < length; ++t) order[b * length + t] = static_cast<int>(t * batch + b);
  return gather_rows(rows, order);
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"kind", c.kind},
       {"vocab", c.vocab},
       {"d", c.d},
       {"layers", c.layers},
       {"heads", c.heads},
       {"bidirectional", c.bidirectional},
       {"controller_hidden", c.controller_hidden},
       {"tape_factor", c.tape_factor},
       {"tape_length", c.tape_length},
       {"ffn", c.ffn}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  const ModelConfig d;
  c.kind = j.value("kind", d.kind);
  c.vocab = j.value("vocab", d.vocab);
  c.d = j.value("d", d.d);
  c.layers = j.value("layers", d.layers);
  c.heads = j.value("heads", d.heads);
  c.bidirectional = j.value("bidirectional", d.bidirectional);
  c.controller_hidden = j.value("controller_hidden", d.controller_hidden);
  c.tape_factor = j.value("tape_factor", d.tape_factor);
  c.tape_length = j.value("tape_length", d.tape_length);
  c.ffn = j.value("ffn", d.ffn);
}

template <typename T>
std::unique_ptr<SequenceModel<T>> make_model(const ModelConfig& c, std::uint64_t seed) {
  if (c.kind == "lsam") {
    return std::make_unique<LsamModel<T>>(LsamConfig{c.vocab, c.d, c.heads, c.layers, c.bidirectional}, seed);
  }
  if (c.kind == "namtm" || c.kind == "namtm-nojump") {
    return std::make_unique<NamTmModel<T>>(
        NamTmConfig{c.vocab, c.d, c.layers, c.controller_hidden, c.kind == "namtm", c.tape_factor, c.tape_length},
        seed);
  }
  if (c.kind == "noa-encoder" || c.kind == "sdp-encoder") {
    return std::make_unique<EncoderModel<T>>(
        EncoderConfig{c.vocab, c.d, c.heads, c.layers, c.ffn,
                      c.kind == "noa-encoder" ? AttentionKind::noa : AttentionKind::sdp},
        seed);
  }
  throw std::invalid_argument("unknown model kind '" + c.kind +
                              "' (expected lsam, namtm, namtm-nojump, noa-encoder or sdp-encoder)");
}

template Tensor<float> time_major_to_batch_major(const Tensor<float>&, std::size_t, std::size_t);
template Tensor<double> time_major_to_batch_major(const Tensor<double>&, std::size_t, std::size_t);
template std::unique_ptr<SequenceModel<float>> make_model<float>(const ModelConfig&, std::uint64_t);
template std::unique_ptr<SequenceModel<double>> make_model<double>(const ModelConfig&, std::uint64_t);

}  // namespace namlab
