#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "namlab/model.hpp"
#include "namlab/optim.hpp"
#include "namlab/tasks.hpp"

namespace namlab {

struct RunConfig {
  ModelConfig model;
  std::string task = "reduce";
  std::string scale = "desk";  // desk | paper
  double size_factor = 1.0;
  std::uint64_t data_seed = 0;
  std::uint64_t seed = 0;
  double lr = 1e-3;
  std::size_t batch_size = 64;
  std::size_t epochs = 50;
  double clip_norm = 1.0;  // <= 0 disables clipping
  bool early_stop = true;  // stop once OD-easy sequence accuracy is 1
  double time_budget_seconds = 0;  // 0 = unlimited
  std::vector<std::string> eval_splits{"id", "od_easy", "od_hard"};
  std::string output_dir;

  SplitSpec split_spec() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);
RunConfig load_run_config(const std::filesystem::path& path);

struct MetricsRecord {
  std::size_t epoch = 0;
  std::string split;
  double token_accuracy = 0;
  double sequence_accuracy = 0;
  double loss = 0;
  double wall_seconds = 0;
  std::string model;
  std::string task;
  std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const MetricsRecord& r);
void from_json(const nlohmann::json& j, MetricsRecord& r);
std::vector<MetricsRecord> read_metrics_log(const std::filesystem::path& path);

// Argmax predictions per sample (full length rows).
std::vector<std::vector<int>> predict(SequenceModel<float>& model, const Dataset& data, std::size_t batch_size = 256);

struct Scores {
  double token_accuracy = 0;     // mean over samples of the fraction of correct MASK positions
  double sequence_accuracy = 0;  // fraction of samples with every MASK position correct
};
Scores score_predictions(const Dataset& data, const std::vector<std::vector<int>>& predictions);

MetricsRecord evaluate(SequenceModel<float>& model, const Dataset& data, std::size_t batch_size = 256);

// Groups sample indices into batches of identical sequence length.
std::vector<std::vector<std::size_t>> length_buckets(const Dataset& data, std::size_t batch_size,
                                                     std::mt19937_64* shuffle);
TokenBatch make_batch(const Dataset& data, const std::vector<std::size_t>& indices);

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t epoch, std::size_t batch, const std::string& what)
      : std::runtime_error(what), epoch_(epoch), batch_(batch) {}
  std::size_t epoch() const { return epoch_; }
  std::size_t batch_index() const { return batch_; }

 private:
  std::size_t epoch_, batch_;
};

struct TrainResult {
  std::vector<MetricsRecord> metrics;
  std::size_t best_epoch = 0;  // 0 = initialization
  double best_od_easy = -1;
  bool stopped_early = false;
  double train_seconds = 0;
};

using EpochCallback = std::function<void(std::size_t epoch, const std::vector<MetricsRecord>&)>;

// Trains in place and leaves the model at the selected (best OD-easy) epoch.
// If config.output_dir is set, writes checkpoint.json, metrics.jsonl and
// config.json there.
TrainResult train(SequenceModel<float>& model, const RunConfig& config, const TaskSplits& data,
                  const EpochCallback& on_epoch = {});

// Builds the model from config.model and config.seed.
std::unique_ptr<SequenceModel<float>> build_model(const RunConfig& config);

// Restores a model saved by train().
std::unique_ptr<SequenceModel<float>> load_model(const std::filesystem::path& checkpoint, RunConfig* config = nullptr);

}  // namespace namlab
