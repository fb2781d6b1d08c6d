#include "namlab/optim.hpp"

#include <cmath>

namespace namlab {

template <typename T>
Tensor<T> ParameterSet<T>::add(std::string name, Tensor<T> value) {
  for (const auto& [n, _] : entries_) {
    if (n == name) throw std::invalid_argument("parameter '" + name + "' registered twice");
  }
  value.set_requires_grad(true);
  entries_.emplace_back(std::move(name), value);
  return value;
}

template <typename T>
Tensor<T> ParameterSet<T>::get(std::string_view name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return t;
  throw std::out_of_range("no parameter named '" + std::string(name) + "'");
}

template <typename T>
std::vector<Tensor<T>> ParameterSet<T>::tensors() const {
  std::vector<Tensor<T>> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.second);
  return out;
}

template <typename T>
std::size_t ParameterSet<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.size();
  return n;
}

template <typename T>
void ParameterSet<T>::zero_grad() {
  for (auto& e : entries_) e.second.zero_grad();
}

template <typename T>
Tensor<T> uniform_tensor(const Shape& shape, T bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-static_cast<double>(bound), static_cast<double>(bound));
  std::vector<T> data(numel(shape));
  for (auto& v : data) v = static_cast<T>(dist(rng));
  return Tensor<T>::from_data(shape, std::move(data));
}

template <typename T>
Tensor<T> fan_in_uniform(const Shape& shape, std::mt19937_64& rng) {
  const std::size_t fan_in = shape.size() >= 2 ? shape.back() : (shape.empty() ? 1 : shape[0]);
  return uniform_tensor<T>(shape, static_cast<T>(1.0 / std::sqrt(static_cast<double>(fan_in))), rng);
}

template <typename T>
Adam<T>::Adam(std::vector<Tensor<T>> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  if (!(config_.lr > 0)) throw std::invalid_argument("adam: learning rate must be positive");
  for (const auto& p : params_) {
    m_.emplace_back(p.size(), T(0));
    v_.emplace_back(p.size(), T(0));
  }
}

template <typename T>
void Adam<T>::set_lr(double lr) {
  if (!(lr > 0)) throw std::invalid_argument("adam: learning rate must be positive");
  config_.lr = lr;
}

template <typename T>
void Adam<T>::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    for (T g : params_[i].grad()) {
      if (!std::isfinite(g)) {
        throw NonFiniteGradient(i, "adam: non-finite gradient in parameter #" + std::to_string(i) +
                                       " " + shape_str(params_[i].shape()) + "; step rejected");
      }
    }
  }
  ++step_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto g = params_[i].grad();
    auto p = params_[i].mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g.empty() ? 0.0 : static_cast<double>(g[j]);
      m[j] = static_cast<T>(b1 * m[j] + (1.0 - b1) * gj);
      v[j] = static_cast<T>(b2 * v[j] + (1.0 - b2) * gj * gj);
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      p[j] = static_cast<T>(p[j] - config_.lr * mhat / (std::sqrt(vhat) + config_.eps));
    }
  }
}

template <typename T>
double clip_grad_norm(const std::vector<Tensor<T>>& params, double max_norm) {
  double ss = 0;
  for (const auto& p : params)
    for (T g : p.grad()) ss += static_cast<double>(g) * g;
  const double norm = std::sqrt(ss);
  if (norm > max_norm && norm > 0) {
    const T factor = static_cast<T>(max_norm / norm);
    for (const auto& p : params)
      for (auto& g : p.node()->grad) g *= factor;
  }
  return norm;
}

template class ParameterSet<float>;
template class ParameterSet<double>;
template class Adam<float>;
template class Adam<double>;
template Tensor<float> uniform_tensor<float>(const Shape&, float, std::mt19937_64&);
template Tensor<double> uniform_tensor<double>(const Shape&, double, std::mt19937_64&);
template Tensor<float> fan_in_uniform<float>(const Shape&, std::mt19937_64&);
template Tensor<double> fan_in_uniform<double>(const Shape&, std::mt19937_64&);
template double clip_grad_norm<float>(const std::vector<Tensor<float>>&, double);
template double clip_grad_norm<double>(const std::vector<Tensor<double>>&, double);

}  // namespace namlab
