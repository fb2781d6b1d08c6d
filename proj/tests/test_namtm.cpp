#include <chrono>
#include <numeric>

#include "composite_checks.hpp"
#include "doctest.h"
#include "gradcheck.hpp"
#include "namlab/namtm.hpp"
#include "namlab/ops.hpp"
#include "properties.hpp"

using namespace namlab;
using testing::random_tensor;

namespace {

Tensor<double> one_hot_rows(std::size_t batch, std::size_t n, std::size_t index) {
  std::vector<double> v(batch * n, 0.0);
  for (std::size_t b = 0; b < batch; ++b) v[b * n + index] = 1.0;
  return Tensor<double>::from_data({batch, n}, v);
}

ControllerOutputs<double> fixed_controls(double p_read, double p_write, HeadAction read, HeadAction write,
                                         std::size_t actions = 3) {
  ControllerOutputs<double> c;
  c.p_read = Tensor<double>::full({1}, p_read);
  c.p_write = Tensor<double>::full({1}, p_write);
  c.read_actions = one_hot_rows(1, actions, static_cast<std::size_t>(read));
  c.write_actions = one_hot_rows(1, actions, static_cast<std::size_t>(write));
  return c;
}

NamTmParams<double> plain_params(ParameterSet<double>& ps, std::size_t d, bool jump, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return NamTmParams<double>::create(ps, "tm", d, d, 8, jump, rng);
}

TokenBatch random_tokens(std::size_t batch, std::size_t length, std::mt19937_64& rng) {
  TokenBatch b{batch, length, {}};
  for (std::size_t i = 0; i < batch * length; ++i) b.ids.push_back(static_cast<int>(rng() % 13));
  return b;
}

}  // namespace

TEST_CASE("roll moves a head one cell circularly") {
  const auto e1 = one_hot_rows(1, 5, 0), e5 = one_hot_rows(1, 5, 4);
  CHECK(roll_head(e1, +1).to_vector() == one_hot_rows(1, 5, 1).to_vector());
  CHECK(roll_head(e5, +1).to_vector() == e1.to_vector());
  CHECK(roll_head(e1, -1).to_vector() == e5.to_vector());
  CHECK_THROWS_AS(roll_head(e1, 2), std::invalid_argument);

  // Against an explicit permutation matrix on L = 4, for arbitrary head contents.
  std::mt19937_64 rng(1);
  const auto h = random_tensor<double>({3, 4}, rng, 1.0, false);
  for (int dir : {+1, -1}) {
    const auto r = roll_head(h, dir).to_vector();
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t j = 0; j < 4; ++j) {
        double expect = 0;
        for (std::size_t i = 0; i < 4; ++i) {
          const bool moves = (static_cast<int>(i) + dir + 4) % 4 == static_cast<int>(j);
          expect += (moves ? 1.0 : 0.0) * h[b * 4 + i];
        }
        CHECK(r[b * 4 + j] == expect);
      }
  }
}

TEST_CASE("write gate forced to zero keeps both tapes zero") {
  ParameterSet<double> ps;
  auto p = plain_params(ps, 4, true, 2);
  Tensor<double>(p.ctrl_b2).mutable_data()[1] = -1e4;
  // Route the write logit through the bias only.
  for (std::size_t j = 0; j < p.hidden; ++j) Tensor<double>(p.ctrl_w2).mutable_data()[p.hidden + j] = 0;
  std::mt19937_64 rng(3);
  auto state = TapeMachineState<double>::initial(2, 4, 10);
  for (int t = 0; t < 5; ++t) {
    state = namtm_step(p, state, random_tensor<double>({2, 4}, rng, 1.0, false)).state;
    for (double x : state.value_tape.data()) CHECK(x == 0.0);
    for (double x : state.key_tape.data()) CHECK(x == 0.0);
  }
}

TEST_CASE("crafted program writes, moves back and reads the value") {
  ParameterSet<double> ps;
  const std::size_t d = 4, L = 6;
  auto p = plain_params(ps, d, false, 4);
  auto w = Tensor<double>(p.w_value).mutable_data();
  std::fill(w.begin(), w.end(), 0.0);
  for (std::size_t i = 0; i < d; ++i) w[i * d + i] = 1.0;  // value = x
  const auto v = Tensor<double>::from_data({1, d}, {0.5, -1.0, 2.0, 0.25});
  const auto zero = Tensor<double>::zeros({1, d});

  auto state = TapeMachineState<double>::initial(1, d, L);
  // Write v at e1 and move the write head right.
  auto s1 = namtm_step(p, state, v, fixed_controls(0, 1, HeadAction::noop, HeadAction::right));
  CHECK(s1.state.write_head.to_vector() == one_hot_rows(1, L, 1).to_vector());
  // Move the read head right and back, write nothing.
  auto s2 = namtm_step(p, s1.state, zero, fixed_controls(0, 0, HeadAction::right, HeadAction::left));
  auto s3 = namtm_step(p, s2.state, zero, fixed_controls(0, 0, HeadAction::left, HeadAction::noop));
  auto s4 = namtm_step(p, s3.state, zero, fixed_controls(1, 0, HeadAction::noop, HeadAction::noop));
  CHECK(s3.state.read_head.to_vector() == one_hot_rows(1, L, 0).to_vector());
  for (std::size_t i = 0; i < d; ++i) CHECK(s4.read[i] == doctest::Approx(v[i]).epsilon(1e-12));
}

TEST_CASE("jump lands on the cell whose key matches the query") {
  ParameterSet<double> ps;
  const std::size_t d = 4, L = 8;
  auto p = plain_params(ps, d, true, 5);
  auto wk = Tensor<double>(p.w_key).mutable_data();
  std::fill(wk.begin(), wk.end(), 0.0);
  for (std::size_t i = 0; i < d; ++i) wk[i * d + i] = 1.0;  // key = mu(x)

  auto state = TapeMachineState<double>::initial(1, d, L);
  // Store orthonormal keys e_1, e_2, e_3 at cells 1..3.
  for (std::size_t c = 0; c < 3; ++c) {
    auto ctl = fixed_controls(0, 1, HeadAction::noop, HeadAction::right, 4);
    ctl.jump_query = one_hot_rows(1, d, 3);
    state = namtm_step(p, state, one_hot_rows(1, d, c), ctl).state;
  }
  auto ctl = fixed_controls(0, 0, HeadAction::jump, HeadAction::noop, 4);
  ctl.jump_query = one_hot_rows(1, d, 2);
  const auto after = namtm_step(p, state, Tensor<double>::zeros({1, d}), ctl).state;
  const auto expect = one_hot_rows(1, L, 2).to_vector();
  for (std::size_t i = 0; i < L; ++i) CHECK(std::abs(after.read_head[i] - expect[i]) < 1e-6);
}

TEST_CASE("controller outputs are valid distributions") {
  ParameterSet<double> ps;
  auto p = plain_params(ps, 6, true, 6);
  std::mt19937_64 rng(7);
  const auto c = namtm_control(p, random_tensor<double>({3, 6}, rng, 2.0, false));
  CHECK(c.read_actions.shape() == Shape{3, 4});
  for (const auto* a : {&c.read_actions, &c.write_actions})
    for (std::size_t b = 0; b < 3; ++b) {
      double s = 0;
      for (std::size_t j = 0; j < 4; ++j) {
        CHECK((*a)[b * 4 + j] >= 0.0);
        s += (*a)[b * 4 + j];
      }
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
  for (double x : c.p_read.data()) CHECK((x > 0 && x < 1));
  for (std::size_t b = 0; b < 3; ++b) {
    double n = 0;
    for (std::size_t j = 0; j < 6; ++j) n += c.jump_query[b * 6 + j] * c.jump_query[b * 6 + j];
    CHECK(n == doctest::Approx(1.0).epsilon(1e-12));
  }

  ParameterSet<double> ps2;
  CHECK(namtm_control(plain_params(ps2, 6, false, 6), random_tensor<double>({3, 6}, rng, 1.0, false))
            .read_actions.shape() == Shape{3, 3});
}

TEST_CASE("head mass is preserved without jump") {
  ParameterSet<double> ps;
  auto p = plain_params(ps, 4, false, 8);
  std::mt19937_64 rng(9);
  auto state = TapeMachineState<double>::initial(2, 4, 9);
  for (int t = 0; t < 12; ++t) {
    state = namtm_step(p, state, random_tensor<double>({2, 4}, rng, 1.0, false)).state;
    for (const auto* h : {&state.read_head, &state.write_head})
      for (std::size_t b = 0; b < 2; ++b) {
        double s = 0;
        for (std::size_t j = 0; j < 9; ++j) {
          CHECK((*h)[b * 9 + j] >= 0.0);
          s += (*h)[b * 9 + j];
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
      }
  }
}

TEST_CASE("length-one model is one step per layer plus projection") {
  NamTmModel<double> model({13, 6, 2, 8, true, 2.0, 0}, 10);
  const TokenBatch tok{2, 1, {4, 11}};
  const auto logits = model.forward(tok);
  const auto emb = embedding(model.embedding_table(), tok.ids);
  const auto L = model.tape_length_for(1);
  CHECK(L == 2);
  const auto r0 = namtm_step(model.layers()[0], TapeMachineState<double>::initial(2, 6, L), emb).read;
  const auto in1 = concat<double>({r0, emb});
  const auto r1 = namtm_step(model.layers()[1], TapeMachineState<double>::initial(2, 6, L), in1).read;
  const auto expect = linear(concat<double>({r1, in1}), model.projection_weight(), model.projection_bias());
  CHECK(logits.to_vector() == expect.to_vector());
  CHECK_THROWS_AS(model.forward(TokenBatch{1, 0, {}}), std::invalid_argument);
}

TEST_CASE("composite step gradient in 32-bit") {
  const auto r = testing::namtm_step_check();
  INFO("relative error " << r.error);
  CHECK(r.error < 1e-3);
}

TEST_CASE("32-bit gradient wrt W_v matches finite differences") {
  const NamTmConfig cfg{13, 6, 2, 8, true, 2.0, 0};
  NamTmModel<float> f(cfg, 21);
  NamTmModel<double> g(cfg, 21);
  for (std::size_t i = 0; i < f.parameters().entries().size(); ++i) {
    auto out = Tensor<double>(g.parameters().entries()[i].second).mutable_data();
    const auto in = f.parameters().entries()[i].second.data();
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = in[j];
  }
  std::mt19937_64 rng(22);
  const auto tok = random_tokens(1, 5, rng);
  std::vector<int> targets;
  std::vector<unsigned char> mask(5, 1);
  for (int i = 0; i < 5; ++i) targets.push_back(static_cast<int>(rng() % 13));
  backward(masked_cross_entropy(f.forward(tok), targets, mask));
  const auto analytic = f.parameters().get("layer0.w_value").grad();
  const auto numeric = testing::numeric_grad(
      [&](const std::vector<Tensor<double>>&) { return masked_cross_entropy(g.forward(tok), targets, mask); },
      {g.parameters().get("layer0.w_value")});
  const double err = testing::normwise_rel_error({std::vector<double>(analytic.begin(), analytic.end())}, numeric);
  INFO("relative error " << err);
  CHECK(err < 1e-3);
}

TEST_CASE("logits do not depend on tape length once L >= 2S") {
  NamTmModel<double> model({13, 8, 2, 16, true, 2.0, 0}, 12);
  std::mt19937_64 rng(13);
  for (std::size_t S : {1u, 3u, 7u}) {
    const auto tok = random_tokens(2, S, rng);
    const auto a = model.forward_with_tape(tok, 2 * S).to_vector();
    const auto b = model.forward_with_tape(tok, 4 * S).to_vector();
    CHECK(testing::max_abs_diff(a, b) < 1e-5);
  }
}

TEST_CASE("fixed tape rejects sequences longer than half of it") {
  NamTmModel<float> model({13, 4, 1, 4, true, 2.0, 10}, 1);
  CHECK(model.tape_length_for(5) == 10);
  try {
    model.tape_length_for(6);
    FAIL("expected a throw");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("at least 12") != std::string::npos);
  }
  CHECK_THROWS_AS(NamTmModel<float>({13, 4, 1, 4, true, 1.5, 0}, 1), std::invalid_argument);
}

TEST_CASE("per-step cost is constant in the time index at fixed tape length") {
  ParameterSet<float> ps;
  std::mt19937_64 rng(14);
  auto p = NamTmParams<float>::create(ps, "tm", 64, 64, 64, true, rng);
  NoGradGuard guard;
  const auto x = random_tensor<float>({1, 64}, rng, 1.0, false);
  auto state = TapeMachineState<float>::initial(1, 64, 256);
  auto timed = [&](int reps) {
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) state = namtm_step(p, state, x).state;
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / reps;
  };
  const double first = timed(30);
  for (int i = 0; i < 200; ++i) state = namtm_step(p, state, x).state;
  const double later = timed(30);
  CHECK(later < 2 * first);
}
