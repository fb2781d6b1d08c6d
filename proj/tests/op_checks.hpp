#pragma once

#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "namlab/attention.hpp"
#include "namlab/memory.hpp"
#include "namlab/ops.hpp"

namespace testing {

struct OpCheck {
  std::string name;
  double error = 0;  // worst max-elementwise relative error over trials
};

namespace detail {

inline namlab::Tensor<double> weighted(const namlab::Tensor<double>& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return namlab::sum(namlab::mul(y, random_tensor<double>(y.shape(), rng, 1.0, false)));
}

inline std::size_t dim(std::mt19937_64& rng, std::size_t lo = 1, std::size_t hi = 16) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

}  // namespace detail

// Central-difference check of every differentiable op on random 64-bit inputs.
inline std::vector<OpCheck> op_gradient_suite(std::uint64_t seed = 2024, int trials = 3) {
  using namespace namlab;
  using detail::weighted;
  using T = Tensor<double>;
  std::mt19937_64 rng(seed);
  std::vector<OpCheck> results;
  auto check = [&](const std::string& name, const Loss& loss, const std::vector<T>& inputs) {
    const double err = max_elementwise_rel_error(loss, inputs);
    auto it = std::find_if(results.begin(), results.end(), [&](const OpCheck& c) { return c.name == name; });
    if (it == results.end())
      results.push_back({name, err});
    else
      it->error = std::max(it->error, err);
  };

  for (int trial = 0; trial < trials; ++trial) {
    const std::size_t m = detail::dim(rng), n = detail::dim(rng), k = detail::dim(rng);
    auto a = random_tensor<double>({m, n}, rng), b = random_tensor<double>({m, n}, rng);
    const std::uint64_t s = rng();

    check("add", [&](auto& v) { return weighted(add(v[0], v[1]), s); }, {a, b});
    check("sub", [&](auto& v) { return weighted(sub(v[0], v[1]), s); }, {a, b});
    check("mul", [&](auto& v) { return weighted(mul(v[0], v[1]), s); }, {a, b});
    check("scale", [&](auto& v) { return weighted(scale(v[0], -1.7), s); }, {a});
    check("add_bias", [&](auto& v) { return weighted(add_bias(v[0], v[1]), s); }, {a, random_tensor<double>({n}, rng)});
    check("scale_rows", [&](auto& v) { return weighted(scale_rows(v[0], v[1]), s); },
          {a, random_tensor<double>({m}, rng)});
    check("matmul", [&](auto& v) { return weighted(matmul(v[0], v[1]), s); }, {a, random_tensor<double>({n, k}, rng)});
    check("matvec", [&](auto& v) { return weighted(matvec(v[0], v[1]), s); }, {a, random_tensor<double>({n}, rng)});
    check("outer", [&](auto& v) { return weighted(outer(v[0], v[1]), s); },
          {random_tensor<double>({m}, rng), random_tensor<double>({k}, rng)});
    check("transpose", [&](auto& v) { return weighted(transpose(v[0]), s); }, {a});
    check("linear", [&](auto& v) { return weighted(linear(v[0], v[1], v[2]), s); },
          {a, random_tensor<double>({k, n}, rng), random_tensor<double>({k}, rng)});
    check("concat", [&](auto& v) { return weighted(concat<double>({v[0], v[1]}), s); },
          {a, random_tensor<double>({m, k}, rng)});
    const std::size_t lo = n / 3, hi = std::max(lo + 1, n - n / 4);
    check("slice", [&](auto& v) { return weighted(slice(v[0], lo, hi), s); }, {a});
    check("concat_rows", [&](auto& v) { return weighted(concat_rows<double>({v[0], v[1]}), s); },
          {a, random_tensor<double>({k, n}, rng)});
    check("slice_rows", [&](auto& v) { return weighted(slice_rows(v[0], m / 3, std::max(m / 3 + 1, m - m / 4)), s); },
          {a});
    std::vector<int> rows;
    for (std::size_t i = 0; i < 2 * m; ++i) rows.push_back(static_cast<int>(rng() % m));
    check("gather_rows", [&](auto& v) { return weighted(gather_rows(v[0], rows), s); }, {a});
    check("reshape", [&](auto& v) { return weighted(reshape(v[0], {n, m}), s); }, {a});
    check("sigmoid", [&](auto& v) { return weighted(sigmoid(v[0]), s); }, {a});
    check("tanh", [&](auto& v) { return weighted(tanh(v[0]), s); }, {a});
    check("relu", [&](auto& v) { return weighted(relu(v[0]), s); }, {a});
    check("gelu", [&](auto& v) { return weighted(gelu(v[0]), s); }, {a});
    check("softmax", [&](auto& v) { return weighted(softmax(v[0]), s); }, {a});
    check("l2_normalize", [&](auto& v) { return weighted(l2_normalize(v[0]), s); }, {a});
    check("layer_norm", [&](auto& v) { return weighted(layer_norm(v[0], v[1], v[2]), s); },
          {a, random_tensor<double>({n}, rng), random_tensor<double>({n}, rng)});
    const long shift = static_cast<long>(rng() % 5) - 2;
    check("roll", [&](auto& v) { return weighted(roll(v[0], shift), s); }, {a});
    std::vector<int> ids;
    for (std::size_t i = 0; i < k; ++i) ids.push_back(static_cast<int>(rng() % m));
    check("embedding", [&](auto& v) { return weighted(embedding(v[0], ids), s); }, {a});
    std::vector<int> targets;
    std::vector<unsigned char> mask;
    for (std::size_t i = 0; i < m; ++i) {
      targets.push_back(static_cast<int>(rng() % n));
      mask.push_back(i % 3 != 1 ? 1 : 0);
    }
    check("masked_cross_entropy", [&](auto& v) { return masked_cross_entropy(v[0], targets, mask); }, {a});
    check("sum", [&](auto& v) { return sum(mul(v[0], v[0])); }, {a});
    check("mean", [&](auto& v) { return mean(mul(v[0], v[0])); }, {a});

    // Memory primitives over a batch of groups, gates given as logits.
    const std::size_t g = detail::dim(rng, 1, 3), dv = detail::dim(rng, 1, 6), dk = detail::dim(rng, 1, 6);
    const auto mem = random_tensor<double>({g, dv, dk}, rng);
    const auto key = random_tensor<double>({g, dk}, rng), val = random_tensor<double>({g, dv}, rng);
    const auto gw = random_tensor<double>({g}, rng), ge = random_tensor<double>({g}, rng);
    check("nam_read", [&](auto& v) { return weighted(nam_read(v[0], v[1], sigmoid(v[2])), s); }, {mem, key, gw});
    check("nam_read_transposed",
          [&](auto& v) { return weighted(nam_read_transposed(v[0], v[1], sigmoid(v[2])), s); }, {mem, val, gw});
    check("nam_write",
          [&](auto& v) { return weighted(nam_write(v[0], v[1], v[2], sigmoid(v[3]), sigmoid(v[4])), s); },
          {mem, key, val, gw, ge});

    const std::size_t S = detail::dim(rng, 1, 8);
    const std::vector<T> qkv{random_tensor<double>({S, dk}, rng), random_tensor<double>({S, dk}, rng),
                             random_tensor<double>({S, dv}, rng)};
    check("noa_self_attention",
          [&](auto& v) { return weighted(noa_self_attention(AttentionBatch<double>{v[0], v[1], v[2]}), s); }, qkv);
    check("sdp_attention",
          [&](auto& v) { return weighted(sdp_attention(AttentionBatch<double>{v[0], v[1], v[2]}), s); }, qkv);
  }
  return results;
}

}  // namespace testing
