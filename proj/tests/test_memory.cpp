#include <chrono>

#include "doctest.h"
#include "gradcheck.hpp"
#include "namlab/memory.hpp"
#include "namlab/ops.hpp"
#include "properties.hpp"

using namespace namlab;
using testing::random_tensor;
using testing::unit_vector;
using testing::vec;

TEST_CASE("rd examples") {
  std::mt19937_64 rng(1);
  const auto k = vec(unit_vector(4, rng));
  const MemoryMatrix<double> zero(3, 4);
  for (double x : rd(zero, k).to_vector()) CHECK(x == 0.0);

  const auto v = random_tensor<double>({3}, rng, 1.0, false);
  const MemoryMatrix<double> m(outer(v, k));
  const auto full = rd(m, k).to_vector(), half = rd(m, k, 0.5).to_vector();
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(full[i] == doctest::Approx(v[i]).epsilon(1e-12));
    CHECK(half[i] == doctest::Approx(0.5 * v[i]).epsilon(1e-12));
  }
}

TEST_CASE("wr examples") {
  std::mt19937_64 rng(2);
  const MemoryMatrix<double> m(random_tensor<double>({5, 6}, rng, 1.0, false));
  const auto k = vec(unit_vector(6, rng));
  const auto v = random_tensor<double>({5}, rng, 1.0, false);

  const auto back = rd(wr(m, k, v), k).to_vector();
  CHECK(testing::max_abs_diff(back, v.to_vector()) < 1e-10);

  const auto before = m.tensor().to_vector();
  CHECK(wr(m, k, v, 0.0, 0.0).tensor().to_vector() == before);
  CHECK(m.tensor().to_vector() == before);  // functional update
}

TEST_CASE("theorem suite") {
  CHECK(testing::theorem1_max_error(1000, 11) < 1e-9);
  CHECK(testing::orthonormal_retrieval_max_error(1000, 12) < 1e-9);
}

TEST_CASE("overwrite and accumulation") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 100; ++i) {
    const auto k = vec(unit_vector(7, rng));
    const auto v1 = random_tensor<double>({4}, rng, 1.0, false), v2 = random_tensor<double>({4}, rng, 1.0, false);
    const MemoryMatrix<double> m0(4, 7);
    CHECK(testing::max_abs_diff(rd(wr(wr(m0, k, v1), k, v2), k).to_vector(), v2.to_vector()) < 1e-9);
    const auto acc = rd(wr(wr(m0, k, v1, 1.0, 0.0), k, v2, 1.0, 0.0), k).to_vector();
    CHECK(testing::max_abs_diff(acc, add(v1, v2).to_vector()) < 1e-9);
  }
}

TEST_CASE("errors") {
  const MemoryMatrix<double> m(3, 4);
  CHECK_THROWS_AS(rd(m, Tensor<double>::zeros({3})), std::invalid_argument);
  CHECK_THROWS_AS(wr(m, Tensor<double>::zeros({4}), Tensor<double>::zeros({4})), std::invalid_argument);
  CHECK_THROWS_AS(rd(m, Tensor<double>::zeros({4}), 1.5), std::invalid_argument);
  CHECK_THROWS_AS(wr(m, Tensor<double>::zeros({4}), Tensor<double>::zeros({3}), -0.1, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(MemoryMatrix<double>(Tensor<double>::full({2, 2}, std::numeric_limits<double>::infinity())),
                  std::invalid_argument);
}

TEST_CASE("batched kernels agree with per-group calls") {
  std::mt19937_64 rng(4);
  const auto M = random_tensor<double>({3, 2, 4, 5}, rng, 1.0, false);
  const auto k = l2_normalize(random_tensor<double>({3, 2, 5}, rng, 1.0, false));
  const auto v = random_tensor<double>({3, 2, 4}, rng, 1.0, false);
  const auto pw = Tensor<double>::from_data({3, 2}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6});
  const auto pe = Tensor<double>::from_data({3, 2}, {0.9, 0.8, 0.7, 0.6, 0.5, 0.4});
  const auto W = nam_write(M, k, v, pw, pe).to_vector();
  const auto R = nam_read(M, k, pw).to_vector();
  const auto RT = nam_read_transposed(M, v, pe).to_vector();
  for (std::size_t g = 0; g < 6; ++g) {
    const auto m = Tensor<double>::from_data({4, 5}, {M.data().begin() + g * 20, M.data().begin() + g * 20 + 20});
    const auto kg = Tensor<double>::from_data({5}, {k.data().begin() + g * 5, k.data().begin() + g * 5 + 5});
    const auto vg = Tensor<double>::from_data({4}, {v.data().begin() + g * 4, v.data().begin() + g * 4 + 4});
    const auto w1 = sub(add(m, scale(outer(vg, kg), pw[g])), scale(outer(matvec(m, kg), kg), pe[g])).to_vector();
    for (std::size_t i = 0; i < 20; ++i) CHECK(W[g * 20 + i] == doctest::Approx(w1[i]).epsilon(1e-12));
    const auto r1 = scale(matvec(m, kg), pw[g]).to_vector();
    for (std::size_t i = 0; i < 4; ++i) CHECK(R[g * 4 + i] == doctest::Approx(r1[i]).epsilon(1e-12));
    const auto rt = scale(matvec(transpose(m), vg), pe[g]).to_vector();
    for (std::size_t i = 0; i < 5; ++i) CHECK(RT[g * 5 + i] == doctest::Approx(rt[i]).epsilon(1e-12));
  }
}

TEST_CASE("gradients through chained writes and reads") {
  std::mt19937_64 rng(5);
  const auto loss = [](const std::vector<Tensor<double>>& t) {
    // t: M, k1, v1, k2, v2, q, [pw, pe, pr] as logits
    const auto pw = sigmoid(t[6]), pe = sigmoid(t[7]), pr = sigmoid(t[8]);
    auto m = nam_write(t[0], l2_normalize(t[1]), t[2], pw, pe);
    m = nam_write(m, l2_normalize(t[3]), t[4], pe, pw);
    const auto a = nam_read(m, l2_normalize(t[5]), pr);
    const auto b = nam_read_transposed(m, t[2], Tensor<double>());
    return add(sum(mul(a, a)), sum(tanh(b)));
  };
  std::vector<Tensor<double>> in{random_tensor<double>({4, 5}, rng), random_tensor<double>({5}, rng),
                                 random_tensor<double>({4}, rng),    random_tensor<double>({5}, rng),
                                 random_tensor<double>({4}, rng),    random_tensor<double>({5}, rng),
                                 random_tensor<double>({}, rng),     random_tensor<double>({}, rng),
                                 random_tensor<double>({}, rng)};
  CHECK(testing::max_elementwise_rel_error(loss, in) < 1e-4);
}

TEST_CASE("cost of a read/write does not depend on the number of prior writes") {
  std::mt19937_64 rng(6);
  NoGradGuard guard;
  MemoryMatrix<float> m(64, 64);
  const auto k = l2_normalize(random_tensor<float>({64}, rng, 1.0, false));
  const auto v = random_tensor<float>({64}, rng, 1.0, false);
  auto time_ops = [&](int reps) {
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) {
      m = wr(m, k, v, 0.5f, 0.5f);
      (void)rd(m, k);
    }
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / reps;
  };
  for (int i = 0; i < 10; ++i) m = wr(m, k, v, 0.5f, 0.5f);
  const double early = time_ops(2000);
  for (int i = 0; i < 10000; ++i) m = wr(m, k, v, 0.5f, 0.5f);
  const double late = time_ops(2000);
  CHECK(m.tensor().size() == 64 * 64);
  CHECK(late < 2 * early);
  CHECK(early < 2 * late);
}
