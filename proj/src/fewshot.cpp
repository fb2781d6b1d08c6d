#include "namlab/fewshot.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>

#include "namlab/ops.hpp"
#include "namlab/tasks.hpp"

namespace namlab {

template <typename T>
Tensor<T> one_shot_associate(const Tensor<T>& w, const Tensor<T>& x, const Tensor<T>& y) {
  if (w.rank() != 2 || x.rank() != 1 || y.rank() != 1 || x.dim(0) != w.dim(1) || y.dim(0) != w.dim(0)) {
    throw std::invalid_argument("one_shot_associate: W " + shape_str(w.shape()) + ", x " + shape_str(x.shape()) +
                                ", y " + shape_str(y.shape()) + " do not conform");
  }
  double norm2 = 0;
  for (T v : x.data()) norm2 += static_cast<double>(v) * v;
  const T norm = static_cast<T>(std::sqrt(norm2));
  if (!(norm >= T(1e-8))) throw std::invalid_argument("one_shot_associate: |x| < 1e-8");
  const auto u = scale(x, T(1) / norm);
  return sub(add(w, outer(scale(y, T(1) / norm), u)), outer(matvec(w, u), u));
}

template <typename T>
Tensor<T> cosine_classifier_build(const std::vector<Tensor<T>>& class_features) {
  if (class_features.empty()) throw std::invalid_argument("cosine_classifier_build: no classes");
  std::vector<Tensor<T>> rows;
  for (std::size_t n = 0; n < class_features.size(); ++n) {
    const auto& f = class_features[n];
    if (f.rank() != 2 || f.dim(0) == 0) {
      throw std::invalid_argument("cosine_classifier_build: class " + std::to_string(n) + " features " +
                                  shape_str(f.shape()) + " are not a non-empty [K, H] matrix");
    }
    const std::size_t K = f.dim(0);
    const auto avg = scale(matmul(Tensor<T>::full({1, K}, T(1)), f), T(1) / static_cast<T>(K));
    double norm2 = 0;
    for (T v : avg.data()) norm2 += static_cast<double>(v) * v;
    if (std::sqrt(norm2) < 1e-8) {
      throw std::invalid_argument("cosine_classifier_build: class " + std::to_string(n) + " has a zero mean feature");
    }
    rows.push_back(avg);
  }
  return l2_normalize(concat_rows(rows));
}

template <typename T>
void FewShotProblem<T>::validate() const {
  if (feature_dim == 0) throw std::invalid_argument("few-shot problem: feature_dim must be positive");
  if (base.defined() && (base.rank() != 2 || base.dim(1) != feature_dim)) {
    throw std::invalid_argument("few-shot problem: base " + shape_str(base.shape()) + " vs feature dim " +
                                std::to_string(feature_dim));
  }
  if (ways > 0) {
    if (shots == 0) throw std::invalid_argument("few-shot problem: shots must be >= 1");
    if (!novel.defined() || novel.shape() != Shape{ways * shots, feature_dim}) {
      throw std::invalid_argument("few-shot problem: novel features " +
                                  (novel.defined() ? shape_str(novel.shape()) : std::string("(none)")) +
                                  ", expected " + shape_str({ways * shots, feature_dim}));
    }
    const auto x = novel.data();
    for (std::size_t r = 0; r < ways * shots; ++r) {
      double n2 = 0;
      for (std::size_t j = 0; j < feature_dim; ++j) n2 += static_cast<double>(x[r * feature_dim + j]) * x[r * feature_dim + j];
      if (std::sqrt(n2) < 1e-8) throw std::invalid_argument("few-shot problem: novel feature " + std::to_string(r) + " is zero");
    }
  }
  if (base_classes() + ways == 0) throw std::invalid_argument("few-shot problem: no classes");
}

template <typename T>
GateNetwork<T> GateNetwork<T>::create(ParameterSet<T>& params, std::size_t feature_dim, std::size_t hidden,
                                      std::mt19937_64& rng) {
  GateNetwork g;
  g.w1 = params.add("gate.w1", fan_in_uniform<T>({hidden, feature_dim}, rng));
  g.b1 = params.add("gate.b1", Tensor<T>::zeros({hidden}));
  g.w2 = params.add("gate.w2", fan_in_uniform<T>({2, hidden}, rng));
  g.b2 = params.add("gate.b2", Tensor<T>::zeros({2}));
  return g;
}

template <typename T>
Tensor<T> GateNetwork<T>::operator()(const Tensor<T>& features) const {
  return sigmoid(linear(tanh(linear(features, w1, b1)), w2, b2));
}

template <typename T>
Tensor<T> constant_gates(std::size_t shots_total, T p_write, T p_erase) {
  std::vector<T> v(2 * shots_total);
  for (std::size_t i = 0; i < shots_total; ++i) {
    v[2 * i] = p_write;
    v[2 * i + 1] = p_erase;
  }
  return Tensor<T>::from_data({shots_total, 2}, std::move(v));
}

template <typename T>
Tensor<T> nam_fewshot_build(const FewShotProblem<T>& problem, const Tensor<T>& gates) {
  problem.validate();
  const std::size_t B = problem.base_classes(), N = problem.ways, K = problem.shots, H = problem.feature_dim;
  if (N == 0) return l2_normalize(problem.base);
  const std::size_t M = N * K;
  if (gates.shape() != Shape{M, 2}) {
    throw std::invalid_argument("nam_fewshot_build: gates " + shape_str(gates.shape()) + ", expected " +
                                shape_str({M, 2}));
  }
  for (T p : gates.data())
    if (!(p >= T(0) && p <= T(1))) throw std::invalid_argument("nam_fewshot_build: gate outside [0, 1]");

  const auto w0 = B > 0 ? concat_rows<T>({problem.base, Tensor<T>::zeros({N, H})}) : Tensor<T>::zeros({N, H});
  const auto keys = l2_normalize(problem.novel);  // [M, H]
  const T inv_k = T(1) / static_cast<T>(K);
  const auto p_write = scale(reshape(slice(gates, 0, 1), {M}), inv_k);
  const auto p_erase = scale(reshape(slice(gates, 1, 2), {M}), inv_k);

  // Write term: sum over shots of p_w e_n mu(x)^T.
  std::vector<T> onehot(M * (B + N), T(0));
  for (std::size_t r = 0; r < M; ++r) onehot[r * (B + N) + B + r / K] = T(1);
  const auto values = scale_rows(Tensor<T>::from_data({M, B + N}, std::move(onehot)), p_write);  // [M, B+N]
  const auto written = matmul(transpose(values), keys);
  // Erase term: sum over shots of p_e W mu(x) mu(x)^T, all against the initial W.
  const auto recalled = scale_rows(matmul(keys, transpose(w0)), p_erase);  // [M, B+N]
  const auto erased = matmul(transpose(recalled), keys);
  return l2_normalize(sub(add(w0, written), erased));
}

template <typename T>
Tensor<T> nam_fewshot_build(const FewShotProblem<T>& problem, const GateNetwork<T>& gate) {
  problem.validate();
  if (problem.ways == 0) return l2_normalize(problem.base);
  return nam_fewshot_build(problem, gate(problem.novel));
}

template <typename T>
Tensor<T> classifier_scores(const Tensor<T>& classifier, const Tensor<T>& queries) {
  return matmul(l2_normalize(queries), transpose(classifier));
}

namespace {

std::vector<float> random_unit(std::size_t h, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(h);
  double n2 = 0;
  for (auto& x : v) {
    x = g(rng);
    n2 += x * x;
  }
  std::vector<float> out(h);
  for (std::size_t i = 0; i < h; ++i) out[i] = static_cast<float>(v[i] / std::sqrt(n2));
  return out;
}

std::vector<float> noisy_unit(const std::vector<float>& center, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(center.size());
  double n2 = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = center[i] + sigma * g(rng) / std::sqrt(static_cast<double>(center.size()));
    n2 += v[i] * v[i];
  }
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i] / std::sqrt(n2));
  return out;
}

}  // namespace

FewShotWorld::FewShotWorld(const FewShotWorldConfig& config, std::uint64_t seed) : config_(config) {
  if (config.feature_dim == 0 || config.ways == 0 || config.shots == 0 || config.base_classes == 0) {
    throw std::invalid_argument("few-shot world: B, N, K and H must all be >= 1");
  }
  if (!(config.novel_base_correlation >= 0 && config.novel_base_correlation < 1)) {
    throw std::invalid_argument("few-shot world: novel_base_correlation must be in [0, 1)");
  }
  std::mt19937_64 rng(seed);
  std::vector<float> base;
  for (std::size_t b = 0; b < config.base_classes; ++b) {
    auto c = random_unit(config.feature_dim, rng);
    base.insert(base.end(), c.begin(), c.end());
  }
  base_ = Tensor<float>::from_data({config.base_classes, config.feature_dim}, std::move(base));
}

Episode FewShotWorld::sample_episode(std::mt19937_64& rng) const {
  const auto& c = config_;
  const std::size_t H = c.feature_dim, B = c.base_classes;
  const double rho = c.novel_base_correlation, rest = std::sqrt(1 - rho * rho);
  std::uniform_int_distribution<std::size_t> pick_base(0, B - 1);
  const auto base = base_.data();
  auto base_center = [&](std::size_t b) { return std::vector<float>(base.begin() + b * H, base.begin() + (b + 1) * H); };

  std::vector<std::vector<float>> novel_centers;
  for (std::size_t n = 0; n < c.ways; ++n) {
    const auto cb = base_center(pick_base(rng));
    const auto u = random_unit(H, rng);
    std::vector<float> center(H);
    double n2 = 0;
    for (std::size_t i = 0; i < H; ++i) {
      center[i] = static_cast<float>(rho * cb[i] + rest * u[i]);
      n2 += static_cast<double>(center[i]) * center[i];
    }
    for (auto& x : center) x = static_cast<float>(x / std::sqrt(n2));
    novel_centers.push_back(std::move(center));
  }

  Episode ep;
  std::vector<float> support;
  for (std::size_t n = 0; n < c.ways; ++n)
    for (std::size_t k = 0; k < c.shots; ++k) {
      const auto f = noisy_unit(novel_centers[n], c.noise, rng);
      support.insert(support.end(), f.begin(), f.end());
    }
  ep.problem.base = base_;
  ep.problem.novel = Tensor<float>::from_data({c.ways * c.shots, H}, std::move(support));
  ep.problem.ways = c.ways;
  ep.problem.shots = c.shots;
  ep.problem.feature_dim = H;

  std::vector<float> queries;
  auto add_query = [&](const std::vector<float>& center, int label, bool novel) {
    const auto f = noisy_unit(center, c.noise, rng);
    queries.insert(queries.end(), f.begin(), f.end());
    ep.labels.push_back(label);
    ep.is_novel.push_back(novel ? 1 : 0);
  };
  for (std::size_t n = 0; n < c.ways; ++n)
    for (std::size_t q = 0; q < c.queries_per_class; ++q) add_query(novel_centers[n], static_cast<int>(B + n), true);
  for (std::size_t q = 0; q < c.ways * c.queries_per_class; ++q) {
    const std::size_t b = pick_base(rng);
    add_query(base_center(b), static_cast<int>(b), false);
  }
  ep.queries = Tensor<float>::from_data({ep.labels.size(), H}, std::move(queries));
  return ep;
}

FewShotAccuracy score_episode(const Tensor<float>& classifier, const Episode& episode) {
  NoGradGuard guard;
  const auto scores = classifier_scores(classifier, episode.queries);
  const std::size_t C = scores.dim(1);
  const auto s = scores.data();
  std::size_t hit[2] = {0, 0}, count[2] = {0, 0};
  for (std::size_t q = 0; q < episode.labels.size(); ++q) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < C; ++j)
      if (s[q * C + j] > s[q * C + best]) best = j;
    const int kind = episode.is_novel[q];
    ++count[kind];
    if (static_cast<int>(best) == episode.labels[q]) ++hit[kind];
  }
  FewShotAccuracy acc;
  acc.base = count[0] ? static_cast<double>(hit[0]) / count[0] : 0;
  acc.novel = count[1] ? static_cast<double>(hit[1]) / count[1] : 0;
  acc.both = static_cast<double>(hit[0] + hit[1]) / static_cast<double>(count[0] + count[1]);
  return acc;
}

namespace {

double mean_both(const GateNetwork<float>& gate, const std::vector<Episode>& episodes) {
  NoGradGuard guard;
  double total = 0;
  for (const auto& ep : episodes) total += score_episode(nam_fewshot_build(ep.problem, gate), ep).both;
  return total / static_cast<double>(episodes.size());
}

std::vector<std::vector<float>> snapshot(const ParameterSet<float>& params) {
  std::vector<std::vector<float>> out;
  for (const auto& [name, t] : params.entries()) out.push_back(t.to_vector());
  return out;
}

void restore(ParameterSet<float>& params, const std::vector<std::vector<float>>& values) {
  std::size_t i = 0;
  for (const auto& [name, t] : params.entries()) {
    auto dst = Tensor<float>(t).mutable_data();
    std::copy(values[i].begin(), values[i].end(), dst.begin());
    ++i;
  }
}

}  // namespace

GateTrainResult train_gate(GateNetwork<float>& gate, ParameterSet<float>& params, const FewShotWorld& world,
                           const GateTrainConfig& config) {
  std::mt19937_64 val_rng(derive_seed(config.seed, 101, 0));
  std::vector<Episode> val;
  for (std::size_t i = 0; i < config.val_episodes; ++i) val.push_back(world.sample_episode(val_rng));

  std::mt19937_64 rng(derive_seed(config.seed, 102, 0));
  AdamConfig ac;
  ac.lr = config.lr;
  Adam<float> adam(params.tensors(), ac);

  GateTrainResult result;
  result.best_val_both = mean_both(gate, val);
  result.val_history.emplace_back(0, result.best_val_both);
  auto best = snapshot(params);

  for (std::size_t step = 1; step <= config.steps; ++step) {
    const Episode ep = world.sample_episode(rng);
    const auto classifier = nam_fewshot_build(ep.problem, gate);
    const auto logits = scale(classifier_scores(classifier, ep.queries), static_cast<float>(config.logit_scale));
    const std::vector<unsigned char> mask(ep.labels.size(), 1);
    const auto loss = masked_cross_entropy(logits, ep.labels, mask);
    if (!std::isfinite(loss.item())) {
      throw GateDiverged(step, "gate training diverged: non-finite loss at step " + std::to_string(step));
    }
    params.zero_grad();
    backward(loss);
    adam.step();
    if (step % config.val_every == 0 || step == config.steps) {
      const double acc = mean_both(gate, val);
      result.val_history.emplace_back(step, acc);
      if (acc > result.best_val_both) {
        result.best_val_both = acc;
        result.best_step = step;
        best = snapshot(params);
      }
    }
  }
  restore(params, best);
  return result;
}

std::vector<FewShotBenchRow> run_fewshot_bench(const FewShotBenchConfig& config) {
  std::vector<FewShotBenchRow> rows;
  for (std::uint64_t seed : config.seeds) {
    const FewShotWorld world(config.world, derive_seed(seed, 200, 0));
    ParameterSet<float> params;
    std::mt19937_64 init(derive_seed(seed, 201, 0));
    auto gate = GateNetwork<float>::create(params, config.world.feature_dim, config.train.hidden, init);
    GateTrainConfig tc = config.train;
    tc.seed = derive_seed(seed, 202, 0);
    train_gate(gate, params, world, tc);

    std::mt19937_64 test_rng(derive_seed(seed, 203, 0));
    FewShotAccuracy cos{}, nam{};
    NoGradGuard guard;
    for (std::size_t e = 0; e < config.test_episodes; ++e) {
      const Episode ep = world.sample_episode(test_rng);
      std::vector<Tensor<float>> classes;
      const std::size_t K = ep.problem.shots;
      for (std::size_t n = 0; n < ep.problem.ways; ++n) classes.push_back(slice_rows(ep.problem.novel, n * K, (n + 1) * K));
      const auto cosine = concat_rows<float>({ep.problem.base, cosine_classifier_build(classes)});
      const auto a = score_episode(cosine, ep);
      const auto b = score_episode(nam_fewshot_build(ep.problem, gate), ep);
      cos.both += a.both, cos.novel += a.novel, cos.base += a.base;
      nam.both += b.both, nam.novel += b.novel, nam.base += b.base;
    }
    const double n = static_cast<double>(config.test_episodes);
    rows.push_back({"cosine", seed, {cos.both / n, cos.novel / n, cos.base / n}});
    rows.push_back({"nam", seed, {nam.both / n, nam.novel / n, nam.base / n}});
  }
  return rows;
}

void write_fewshot_csv(std::ostream& out, const std::vector<FewShotBenchRow>& rows) {
  out << "method,seed,acc_both,acc_novel,acc_base\n";
  for (const auto& r : rows) {
    out << r.method << ',' << r.seed << ',' << r.accuracy.both << ',' << r.accuracy.novel << ',' << r.accuracy.base
        << '\n';
  }
}

#define NAMLAB_FEWSHOT(T)                                                                           \
  template Tensor<T> one_shot_associate(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);     \
  template Tensor<T> cosine_classifier_build(const std::vector<Tensor<T>>&);                       \
  template struct FewShotProblem<T>;                                                               \
  template struct GateNetwork<T>;                                                                  \
  template Tensor<T> nam_fewshot_build(const FewShotProblem<T>&, const Tensor<T>&);                \
  template Tensor<T> nam_fewshot_build(const FewShotProblem<T>&, const GateNetwork<T>&);           \
  template Tensor<T> constant_gates(std::size_t, T, T);                                            \
  template Tensor<T> classifier_scores(const Tensor<T>&, const Tensor<T>&);

NAMLAB_FEWSHOT(float)
NAMLAB_FEWSHOT(double)

}  // namespace namlab
