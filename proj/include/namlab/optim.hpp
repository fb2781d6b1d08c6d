// Named parameter collections, initialisation and the Adam optimizer.
#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "namlab/tensor.hpp"

namespace namlab {

template <typename T>
class ParameterSet {
 public:
  // Registers a trainable leaf under a unique name and returns a handle to it.
  Tensor<T> add(std::string name, Tensor<T> value);

  const std::vector<std::pair<std::string, Tensor<T>>>& entries() const { return entries_; }
  Tensor<T> get(std::string_view name) const;
  std::vector<Tensor<T>> tensors() const;
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<std::pair<std::string, Tensor<T>>> entries_;
};

// U(-bound, bound) initialisation; bound defaults to 1/sqrt(fan_in) for [out, in] shapes.
template <typename T>
Tensor<T> uniform_tensor(const Shape& shape, T bound, std::mt19937_64& rng);
template <typename T>
Tensor<T> fan_in_uniform(const Shape& shape, std::mt19937_64& rng);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class NonFiniteGradient : public std::runtime_error {
 public:
  NonFiniteGradient(std::size_t index, const std::string& what)
      : std::runtime_error(what), index_(index) {}
  std::size_t parameter_index() const { return index_; }

 private:
  std::size_t index_;
};

template <typename T>
class Adam {
 public:
  Adam(std::vector<Tensor<T>> params, AdamConfig config);

  // Applies one update from the parameters' current grads. Parameters that
  // received no gradient are treated as having a zero gradient. Throws
  // NonFiniteGradient, leaving parameters and moments untouched, if any grad
  // entry is NaN or infinite.
  void step();

  std::uint64_t steps() const { return step_; }
  const AdamConfig& config() const { return config_; }
  void set_lr(double lr);
  const std::vector<T>& first_moment(std::size_t i) const { return m_.at(i); }
  const std::vector<T>& second_moment(std::size_t i) const { return v_.at(i); }

 private:
  std::vector<Tensor<T>> params_;
  AdamConfig config_;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
  std::uint64_t step_ = 0;
};

// Rescales grads so their global L2 norm is at most max_norm. Returns the norm before clipping.
template <typename T>
double clip_grad_norm(const std::vector<Tensor<T>>& params, double max_norm);

}  // namespace namlab
