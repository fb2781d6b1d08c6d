// NAM few-shot classifier heads.
//
// A classifier is a matrix W whose row c scores class c as W_c . mu(x).
// Adding novel classes writes (key = mu(feature), value = class one-hot) into
// W; the optional erase term removes what existing rows already store along
// the new key. Without erasure and with unit gates the construction reduces
// to a feature-averaging cosine classifier.
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include "namlab/optim.hpp"

namespace namlab {

// W' = W + (y/|x|) u^T - W u u^T with u = x/|x|, so that W' x = y.
template <typename T>
Tensor<T> one_shot_associate(const Tensor<T>& w, const Tensor<T>& x, const Tensor<T>& y);

// class_features[n] is [K_n, H]; row n of the result is mu(mean of class n).
template <typename T>
Tensor<T> cosine_classifier_build(const std::vector<Tensor<T>>& class_features);

template <typename T>
struct FewShotProblem {
  Tensor<T> base;      // [B, H] unit rows; undefined when B = 0
  Tensor<T> novel;     // [N * K, H], class-major (rows n*K .. n*K+K-1 are class n)
  std::size_t ways = 0;
  std::size_t shots = 0;
  std::size_t feature_dim = 0;

  std::size_t base_classes() const { return base.defined() ? base.dim(0) : 0; }
  void validate() const;
};

// Two-layer map feature -> (p_w, p_e).
template <typename T>
struct GateNetwork {
  Tensor<T> w1, b1, w2, b2;

  static GateNetwork create(ParameterSet<T>& params, std::size_t feature_dim, std::size_t hidden,
                            std::mt19937_64& rng);
  // [M, H] -> [M, 2] probabilities (column 0 write, column 1 erase).
  Tensor<T> operator()(const Tensor<T>& features) const;
};

// gates is [N * K, 2]. Returns mu-row-normalized [B + N, H].
template <typename T>
Tensor<T> nam_fewshot_build(const FewShotProblem<T>& problem, const Tensor<T>& gates);

template <typename T>
Tensor<T> nam_fewshot_build(const FewShotProblem<T>& problem, const GateNetwork<T>& gate);

// Constant gates for every shot.
template <typename T>
Tensor<T> constant_gates(std::size_t shots_total, T p_write, T p_erase);

// [Q, H] queries -> [Q, C] cosine scores against classifier rows.
template <typename T>
Tensor<T> classifier_scores(const Tensor<T>& classifier, const Tensor<T>& queries);

// Synthetic feature world: base class centers are random unit vectors; each
// novel class center is mu(rho * c_b + sqrt(1 - rho^2) * u) for a random base
// center c_b and random direction u; a feature is mu(center + sigma * noise).
struct FewShotWorldConfig {
  std::size_t base_classes = 20;
  std::size_t ways = 5;
  std::size_t shots = 5;
  std::size_t feature_dim = 64;
  double novel_base_correlation = 0.7;
  double noise = 2.5;
  std::size_t queries_per_class = 10;
};

struct Episode {
  FewShotProblem<float> problem;
  Tensor<float> queries;     // [Q, H]
  std::vector<int> labels;   // class index in [0, B + N)
  std::vector<unsigned char> is_novel;
};

class FewShotWorld {
 public:
  FewShotWorld(const FewShotWorldConfig& config, std::uint64_t seed);
  Episode sample_episode(std::mt19937_64& rng) const;
  const FewShotWorldConfig& config() const { return config_; }
  const Tensor<float>& base_centers() const { return base_; }

 private:
  FewShotWorldConfig config_;
  Tensor<float> base_;
};

struct FewShotAccuracy {
  double both = 0;
  double novel = 0;
  double base = 0;
};

FewShotAccuracy score_episode(const Tensor<float>& classifier, const Episode& episode);

struct GateTrainConfig {
  std::size_t hidden = 32;
  std::size_t steps = 1500;
  std::size_t val_every = 100;
  std::size_t val_episodes = 100;
  double lr = 3e-3;
  double logit_scale = 10.0;
  std::uint64_t seed = 0;
};

struct GateTrainResult {
  std::size_t best_step = 0;
  double best_val_both = 0;
  std::vector<std::pair<std::size_t, double>> val_history;
};

class GateDiverged : public std::runtime_error {
 public:
  GateDiverged(std::size_t step, const std::string& what) : std::runtime_error(what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

// Trains by cross-entropy of scaled scores on episode queries; parameters end
// at the best validation (both-category accuracy) snapshot.
GateTrainResult train_gate(GateNetwork<float>& gate, ParameterSet<float>& params, const FewShotWorld& world,
                           const GateTrainConfig& config);

struct FewShotBenchRow {
  std::string method;
  std::uint64_t seed = 0;
  FewShotAccuracy accuracy;
};

struct FewShotBenchConfig {
  FewShotWorldConfig world;
  GateTrainConfig train;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::size_t test_episodes = 300;
};

// For each seed: build a world, train a gate, then score the cosine baseline
// and the NAM head on the same held-out episodes.
std::vector<FewShotBenchRow> run_fewshot_bench(const FewShotBenchConfig& config);
void write_fewshot_csv(std::ostream& out, const std::vector<FewShotBenchRow>& rows);

}  // namespace namlab
