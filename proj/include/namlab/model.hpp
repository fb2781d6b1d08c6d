// Token-sequence models share one interface so the harness can train and
// evaluate any of them: a batch of equal-length token rows in, per-position
// vocabulary logits out.
#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "namlab/optim.hpp"
#include "namlab/tensor.hpp"

namespace namlab {

struct TokenBatch {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<int> ids;  // row-major [batch, length]

  int at(std::size_t b, std::size_t t) const { return ids[b * length + t]; }
  // ids of column t, one per row
  std::vector<int> column(std::size_t t) const;
};

template <typename T>
class SequenceModel {
 public:
  virtual ~SequenceModel() = default;
  // Logits [batch * length, vocab], row b * length + t.
  virtual Tensor<T> forward(const TokenBatch& tokens) = 0;
  virtual ParameterSet<T>& parameters() = 0;
  virtual const ParameterSet<T>& parameters() const = 0;
  virtual std::size_t vocab_size() const = 0;
};

// Reorders per-step rows [t * batch + b] into [b * length + t].
template <typename T>
Tensor<T> time_major_to_batch_major(const Tensor<T>& rows, std::size_t batch, std::size_t length);

struct ModelConfig {
  std::string kind = "namtm";  // lsam | namtm | namtm-nojump | noa-encoder | sdp-encoder
  std::size_t vocab = 13;
  std::size_t d = 64;
  std::size_t layers = 2;
  // lsam / encoder
  std::size_t heads = 8;
  bool bidirectional = true;
  // namtm
  std::size_t controller_hidden = 64;
  double tape_factor = 2.0;   // L = tape_factor * sequence length ...
  std::size_t tape_length = 0;  // ... unless a fixed L is given here
  // encoder
  std::size_t ffn = 128;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

template <typename T>
std::unique_ptr<SequenceModel<T>> make_model(const ModelConfig& config, std::uint64_t seed);

}  // namespace namlab
