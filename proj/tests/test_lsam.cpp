#include <chrono>

#include "doctest.h"
#include "gradcheck.hpp"
#include "namlab/lsam.hpp"
#include "namlab/ops.hpp"

using namespace namlab;
using testing::random_tensor;

namespace {

template <typename T>
void fill(Tensor<T> t, T value) {
  for (auto& x : t.mutable_data()) x = value;
}

template <typename Dst, typename Src>
void copy_params(ParameterSet<Dst>& dst, const ParameterSet<Src>& src) {
  REQUIRE(dst.entries().size() == src.entries().size());
  for (std::size_t i = 0; i < dst.entries().size(); ++i) {
    auto out = Tensor<Dst>(dst.entries()[i].second).mutable_data();
    const auto in = src.entries()[i].second.data();
    REQUIRE(out.size() == in.size());
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = static_cast<Dst>(in[j]);
  }
}

TokenBatch random_tokens(std::size_t batch, std::size_t length, std::mt19937_64& rng) {
  TokenBatch b{batch, length, {}};
  for (std::size_t i = 0; i < batch * length; ++i) b.ids.push_back(static_cast<int>(rng() % 13));
  return b;
}

}  // namespace

TEST_CASE("read gate forced to zero gives zero hidden state") {
  std::mt19937_64 rng(1);
  ParameterSet<double> ps;
  auto cell = LsamCellParams<double>::create(ps, "c", 6, 8, 2, rng);
  auto b = Tensor<double>(cell.b_rw).mutable_data();
  for (std::size_t h = 0; h < 2; ++h) b[h] = -1e4;
  auto state = LsamState<double>::zeros(cell, 3);
  for (int t = 0; t < 5; ++t) {
    state = lsam_step(cell, state, random_tensor<double>({3, 6}, rng, 1.0, false));
    for (double x : state.hidden.data()) CHECK(x == 0.0);
  }
}

TEST_CASE("crafted single head returns the written value") {
  std::mt19937_64 rng(2);
  const std::size_t d = 4;
  ParameterSet<double> ps;
  auto cell = LsamCellParams<double>::create(ps, "c", d, d, 1, rng);
  fill(cell.w_qkv, 0.0);
  fill(cell.b_qkv, 0.0);
  fill(cell.w_rw, 0.0);
  fill(cell.b_rw, 1e4);  // p_r = p_w = 1
  auto w = Tensor<double>(cell.w_qkv).mutable_data();
  auto bq = Tensor<double>(cell.b_qkv).mutable_data();
  bq[0] = 1;       // q = e1
  bq[d] = 1;       // k = e1
  for (std::size_t i = 0; i < d; ++i) w[(2 * d + i) * (2 * d) + i] = 1;  // v = x
  auto state = LsamState<double>::zeros(cell, 1);
  for (int t = 0; t < 4; ++t) {
    const auto x = random_tensor<double>({1, d}, rng, 1.0, false);
    state = lsam_step(cell, state, x);
    for (std::size_t i = 0; i < d; ++i) CHECK(state.hidden[i] == doctest::Approx(x[i]).epsilon(1e-12));
  }
}

TEST_CASE("state size and gates") {
  std::mt19937_64 rng(3);
  ParameterSet<float> ps;
  auto cell = LsamCellParams<float>::create(ps, "c", 16, 16, 4, rng);
  auto state = LsamState<float>::zeros(cell, 2);
  for (int t = 0; t < 7; ++t) {
    LsamGates<float> gates;
    state = lsam_step(cell, state, random_tensor<float>({2, 16}, rng, 1.0, false), &gates);
    CHECK(state.reals_per_sample() == 4 * 4 * 4 + 16);
    CHECK(gates.p_read.shape() == Shape{2, 4});
    for (float p : gates.p_read.data()) CHECK((p > 0.f && p < 1.f));
    for (float p : gates.p_write.data()) CHECK((p > 0.f && p < 1.f));
  }
  CHECK_THROWS_AS(lsam_step(cell, state, random_tensor<float>({2, 15}, rng, 1.0, false)), std::invalid_argument);
  CHECK_THROWS_AS(LsamCellParams<float>::create(ps, "bad", 16, 10, 4, rng), std::invalid_argument);
}

TEST_CASE("write gate forced to zero keeps memory at zero") {
  std::mt19937_64 rng(4);
  ParameterSet<double> ps;
  auto cell = LsamCellParams<double>::create(ps, "c", 8, 8, 2, rng);
  auto b = Tensor<double>(cell.b_rw).mutable_data();
  for (std::size_t h = 2; h < 4; ++h) b[h] = -1e4;
  auto state = LsamState<double>::zeros(cell, 2);
  for (int t = 0; t < 6; ++t) {
    state = lsam_step(cell, state, random_tensor<double>({2, 8}, rng, 1.0, false));
    for (double x : state.memory.data()) CHECK(x == 0.0);
    for (double x : state.hidden.data()) CHECK(x == 0.0);
  }
}

TEST_CASE("per-step cost does not grow with the time index") {
  std::mt19937_64 rng(5);
  ParameterSet<float> ps;
  auto cell = LsamCellParams<float>::create(ps, "c", 64, 64, 8, rng);
  NoGradGuard guard;
  const auto x = random_tensor<float>({1, 64}, rng, 1.0, false);
  auto state = LsamState<float>::zeros(cell, 1);
  auto timed = [&](int reps) {
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) state = lsam_step(cell, state, x);
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / reps;
  };
  const double first = timed(50);
  for (int i = 0; i < 400; ++i) state = lsam_step(cell, state, x);
  const double later = timed(50);
  CHECK(later < 2 * first);
}

TEST_CASE("length-one unidirectional model is one step plus projection") {
  std::mt19937_64 rng(6);
  LsamModel<double> model({13, 8, 2, 1, false}, 7);
  const TokenBatch tok{2, 1, {3, 11}};
  const auto logits = model.forward(tok);
  const auto& cell = model.layers()[0].forward_cell;
  const auto state = lsam_step(cell, LsamState<double>::zeros(cell, 2), embedding(model.embedding_table(), tok.ids));
  const auto expect = linear(state.hidden, model.projection_weight(), model.projection_bias());
  CHECK(logits.to_vector() == expect.to_vector());
  CHECK_THROWS_AS(model.forward(TokenBatch{1, 0, {}}), std::invalid_argument);
}

TEST_CASE("bidirectional symmetry under direction swap and reversal") {
  const std::size_t d = 8, S = 5;
  LsamConfig cfg{13, d, 4, 2, true};
  LsamModel<double> a(cfg, 11), b(cfg, 99);
  const std::size_t half = d / 2;
  // b = a with forward/backward cells exchanged; layers that consume a
  // [fwd : bwd] concatenation also get their input column halves exchanged.
  auto swap_cols = [](std::vector<double> w, std::size_t rows, std::size_t cols, std::size_t lo, std::size_t len) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < len; ++j) std::swap(w[r * cols + lo + j], w[r * cols + lo + len + j]);
    return w;
  };
  for (const auto& [name, t] : b.parameters().entries()) {
    std::string src = name;
    if (name.find(".fwd.") != std::string::npos) src.replace(src.find(".fwd."), 5, ".bwd.");
    else if (name.find(".bwd.") != std::string::npos) src.replace(src.find(".bwd."), 5, ".fwd.");
    auto values = a.parameters().get(src).to_vector();
    const bool deep = name.rfind("layer0.", 0) != 0 && name.rfind("layer", 0) == 0;
    if ((deep && (name.find("w_qkv") != std::string::npos || name.find("w_rw") != std::string::npos)) ||
        name == "proj.w") {
      values = swap_cols(values, t.dim(0), t.dim(1), 0, half);
    }
    auto out = Tensor<double>(t).mutable_data();
    std::copy(values.begin(), values.end(), out.begin());
  }
  std::mt19937_64 rng(12);
  const auto tok = random_tokens(2, S, rng);
  TokenBatch rev = tok;
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t t = 0; t < S; ++t) rev.ids[i * S + t] = tok.ids[i * S + S - 1 - t];
  const auto la = a.forward(tok), lb = b.forward(rev);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t t = 0; t < S; ++t)
      for (std::size_t v = 0; v < 13; ++v)
        CHECK(lb[(i * S + S - 1 - t) * 13 + v] == doctest::Approx(la[(i * S + t) * 13 + v]).epsilon(1e-12));
}

TEST_CASE("forward is deterministic") {
  LsamModel<float> model({13, 16, 4, 2, true}, 3);
  std::mt19937_64 rng(4);
  const auto tok = random_tokens(3, 7, rng);
  CHECK(model.forward(tok).to_vector() == model.forward(tok).to_vector());
}

TEST_CASE("32-bit gradient wrt W_qkv matches finite differences") {
  const LsamConfig cfg{13, 8, 2, 2, true};
  LsamModel<float> f(cfg, 21);
  LsamModel<double> g(cfg, 21);
  copy_params(g.parameters(), f.parameters());
  std::mt19937_64 rng(22);
  const auto tok = random_tokens(1, 6, rng);
  std::vector<int> targets;
  std::vector<unsigned char> mask(6, 1);
  for (int i = 0; i < 6; ++i) targets.push_back(static_cast<int>(rng() % 13));

  const std::string name = "layer0.fwd.w_qkv";
  backward(masked_cross_entropy(f.forward(tok), targets, mask));
  const auto analytic = f.parameters().get(name).grad();

  auto w = g.parameters().get(name);
  const auto loss = [&](const std::vector<Tensor<double>>&) { return masked_cross_entropy(g.forward(tok), targets, mask); };
  const auto numeric = testing::numeric_grad(loss, {w});
  const double err = testing::normwise_rel_error({std::vector<double>(analytic.begin(), analytic.end())}, numeric);
  INFO("relative error " << err);
  CHECK(err < 1e-3);
}
