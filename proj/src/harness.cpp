#include "namlab/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>

#include "namlab/checkpoint.hpp"
#include "namlab/ops.hpp"

namespace namlab {

SplitSpec RunConfig::split_spec() const {
  SplitSpec spec;
  if (scale == "desk") spec = SplitSpec::desk();
  else if (scale == "paper") spec = SplitSpec::paper();
  else throw std::invalid_argument("unknown scale '" + scale + "' (expected desk or paper)");
  return size_factor == 1.0 ? spec : spec.scaled(size_factor);
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = {{"model", c.model},           {"task", c.task},
       {"scale", c.scale},           {"size_factor", c.size_factor},
       {"data_seed", c.data_seed},   {"seed", c.seed},
       {"lr", c.lr},                 {"batch_size", c.batch_size},
       {"epochs", c.epochs},         {"clip_norm", c.clip_norm},
       {"early_stop", c.early_stop}, {"time_budget_seconds", c.time_budget_seconds},
       {"eval_splits", c.eval_splits}, {"output_dir", c.output_dir}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  static const std::vector<std::string> known = {"model", "task", "scale", "size_factor", "data_seed", "seed", "lr",
                                                 "batch_size", "epochs", "clip_norm", "early_stop",
                                                 "time_budget_seconds", "eval_splits", "output_dir"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw std::invalid_argument("run config: unknown key '" + key + "'");
    }
  }
  const RunConfig d;
  c.model = j.value("model", d.model);
  c.task = j.value("task", d.task);
  c.scale = j.value("scale", d.scale);
  c.size_factor = j.value("size_factor", d.size_factor);
  c.data_seed = j.value("data_seed", d.data_seed);
  c.seed = j.value("seed", d.seed);
  c.lr = j.value("lr", d.lr);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.epochs = j.value("epochs", d.epochs);
  c.clip_norm = j.value("clip_norm", d.clip_norm);
  c.early_stop = j.value("early_stop", d.early_stop);
  c.time_budget_seconds = j.value("time_budget_seconds", d.time_budget_seconds);
  c.eval_splits = j.value("eval_splits", d.eval_splits);
  c.output_dir = j.value("output_dir", d.output_dir);
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  try {
    return nlohmann::json::parse(in).get<RunConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("config " + path.string() + ": " + e.what());
  }
}

void to_json(nlohmann::json& j, const MetricsRecord& r) {
  j = {{"epoch", r.epoch},
       {"split", r.split},
       {"token_accuracy", r.token_accuracy},
       {"sequence_accuracy", r.sequence_accuracy},
       {"loss", r.loss},
       {"wall_seconds", r.wall_seconds},
       {"model", r.model},
       {"task", r.task},
       {"seed", r.seed}};
}

void from_json(const nlohmann::json& j, MetricsRecord& r) {
  r.epoch = j.at("epoch").get<std::size_t>();
  r.split = j.at("split").get<std::string>();
  r.token_accuracy = j.at("token_accuracy").get<double>();
  r.sequence_accuracy = j.at("sequence_accuracy").get<double>();
  r.loss = j.value("loss", 0.0);
  r.wall_seconds = j.value("wall_seconds", 0.0);
  r.model = j.value("model", std::string());
  r.task = j.value("task", std::string());
  r.seed = j.value("seed", std::uint64_t{0});
}

std::vector<MetricsRecord> read_metrics_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open metrics log " + path.string());
  std::vector<MetricsRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line).get<MetricsRecord>());
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<std::vector<std::size_t>> length_buckets(const Dataset& data, std::size_t batch_size,
                                                     std::mt19937_64* shuffle) {
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  std::map<std::size_t, std::vector<std::size_t>> by_length;
  for (std::size_t i = 0; i < data.samples.size(); ++i) by_length[data.samples[i].length()].push_back(i);
  std::vector<std::vector<std::size_t>> batches;
  for (auto& [len, idx] : by_length) {
    if (shuffle) std::shuffle(idx.begin(), idx.end(), *shuffle);
    for (std::size_t s = 0; s < idx.size(); s += batch_size) {
      batches.emplace_back(idx.begin() + static_cast<long>(s),
                           idx.begin() + static_cast<long>(std::min(idx.size(), s + batch_size)));
    }
  }
  if (shuffle) std::shuffle(batches.begin(), batches.end(), *shuffle);
  return batches;
}

TokenBatch make_batch(const Dataset& data, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw std::invalid_argument("make_batch: empty batch");
  TokenBatch b;
  b.batch = indices.size();
  b.length = data.samples.at(indices[0]).length();
  b.ids.reserve(b.batch * b.length);
  for (std::size_t i : indices) {
    const auto& s = data.samples.at(i);
    if (s.length() != b.length) throw std::invalid_argument("make_batch: mixed sequence lengths");
    b.ids.insert(b.ids.end(), s.input.begin(), s.input.end());
  }
  return b;
}

namespace {

void check_tokens(const Dataset& data, std::size_t vocab) {
  for (const auto& s : data.samples)
    for (std::size_t t = 0; t < s.length(); ++t)
      if (s.input[t] < 0 || static_cast<std::size_t>(s.input[t]) >= vocab ||
          s.target[t] < 0 || static_cast<std::size_t>(s.target[t]) >= vocab) {
        throw std::invalid_argument("dataset token outside the model vocabulary of " + std::to_string(vocab));
      }
}

std::vector<int> argmax_rows(const Tensor<float>& logits) {
  const std::size_t n = logits.dim(0), v = logits.dim(1);
  const auto d = logits.data();
  std::vector<int> out(n);
  for (std::size_t r = 0; r < n; ++r) {
    const float* row = d.data() + r * v;
    out[r] = static_cast<int>(std::max_element(row, row + v) - row);
  }
  return out;
}

struct BatchTargets {
  std::vector<int> targets;
  std::vector<unsigned char> mask;
};

BatchTargets batch_targets(const Dataset& data, const std::vector<std::size_t>& indices) {
  BatchTargets bt;
  for (std::size_t i : indices) {
    const auto& s = data.samples[i];
    bt.targets.insert(bt.targets.end(), s.target.begin(), s.target.end());
    for (std::size_t t = 0; t < s.length(); ++t) bt.mask.push_back(s.masked(t) ? 1 : 0);
  }
  return bt;
}

}  // namespace

std::vector<std::vector<int>> predict(SequenceModel<float>& model, const Dataset& data, std::size_t batch_size) {
  check_tokens(data, model.vocab_size());
  NoGradGuard guard;
  std::vector<std::vector<int>> out(data.samples.size());
  for (const auto& idx : length_buckets(data, batch_size, nullptr)) {
    const auto logits = model.forward(make_batch(data, idx));
    if (logits.dim(1) != model.vocab_size()) throw std::invalid_argument("predict: logits do not match the vocabulary");
    const auto am = argmax_rows(logits);
    const std::size_t len = data.samples[idx[0]].length();
    for (std::size_t b = 0; b < idx.size(); ++b) out[idx[b]].assign(am.begin() + b * len, am.begin() + (b + 1) * len);
  }
  return out;
}

Scores score_predictions(const Dataset& data, const std::vector<std::vector<int>>& predictions) {
  if (predictions.size() != data.samples.size()) throw std::invalid_argument("score_predictions: count mismatch");
  Scores sc;
  if (data.samples.empty()) return sc;
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const auto& s = data.samples[i];
    if (predictions[i].size() != s.length()) throw std::invalid_argument("score_predictions: length mismatch");
    std::size_t masked = 0, right = 0;
    for (std::size_t t = 0; t < s.length(); ++t) {
      if (!s.masked(t)) continue;
      ++masked;
      if (predictions[i][t] == s.target[t]) ++right;
    }
    sc.token_accuracy += masked ? static_cast<double>(right) / masked : 1.0;
    sc.sequence_accuracy += right == masked ? 1.0 : 0.0;
  }
  sc.token_accuracy /= static_cast<double>(data.samples.size());
  sc.sequence_accuracy /= static_cast<double>(data.samples.size());
  return sc;
}

MetricsRecord evaluate(SequenceModel<float>& model, const Dataset& data, std::size_t batch_size) {
  check_tokens(data, model.vocab_size());
  const auto start = std::chrono::steady_clock::now();
  NoGradGuard guard;
  std::vector<std::vector<int>> preds(data.samples.size());
  double loss_sum = 0;
  std::size_t loss_rows = 0;
  for (const auto& idx : length_buckets(data, batch_size, nullptr)) {
    const auto logits = model.forward(make_batch(data, idx));
    if (logits.dim(1) != model.vocab_size()) throw std::invalid_argument("evaluate: logits do not match the vocabulary");
    const auto bt = batch_targets(data, idx);
    const std::size_t rows = static_cast<std::size_t>(std::count(bt.mask.begin(), bt.mask.end(), 1));
    loss_sum += static_cast<double>(masked_cross_entropy(logits, bt.targets, bt.mask).item()) * rows;
    loss_rows += rows;
    const auto am = argmax_rows(logits);
    const std::size_t len = data.samples[idx[0]].length();
    for (std::size_t b = 0; b < idx.size(); ++b) preds[idx[b]].assign(am.begin() + b * len, am.begin() + (b + 1) * len);
  }
  const auto sc = score_predictions(data, preds);
  MetricsRecord r;
  r.split = data.split;
  r.task = to_string(data.task);
  r.token_accuracy = sc.token_accuracy;
  r.sequence_accuracy = sc.sequence_accuracy;
  r.loss = loss_rows ? loss_sum / static_cast<double>(loss_rows) : 0.0;
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

std::unique_ptr<SequenceModel<float>> build_model(const RunConfig& config) {
  return make_model<float>(config.model, config.seed);
}

namespace {

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

TrainResult train(SequenceModel<float>& model, const RunConfig& config, const TaskSplits& data,
                  const EpochCallback& on_epoch) {
  if (data.train.samples.empty()) throw std::invalid_argument("train: training split is empty");
  check_tokens(data.train, model.vocab_size());
  const auto start = std::chrono::steady_clock::now();
  auto& params = model.parameters();
  AdamConfig ac;
  ac.lr = config.lr;
  Adam<float> adam(params.tensors(), ac);
  std::mt19937_64 rng(derive_seed(config.seed, 7, 0));

  TrainResult result;
  auto best = snapshot(params);
  const bool select_on_od_easy =
      std::find(config.eval_splits.begin(), config.eval_splits.end(), "od_easy") != config.eval_splits.end();

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto batches = length_buckets(data.train, config.batch_size, &rng);
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const auto tokens = make_batch(data.train, batches[bi]);
      const auto bt = batch_targets(data.train, batches[bi]);
      params.zero_grad();
      const auto loss = masked_cross_entropy(model.forward(tokens), bt.targets, bt.mask);
      if (!std::isfinite(loss.item())) {
        throw TrainingDiverged(epoch, bi, "non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                              std::to_string(bi));
      }
      backward(loss);
      if (config.clip_norm > 0) clip_grad_norm(params.tensors(), config.clip_norm);
      try {
        adam.step();
      } catch (const NonFiniteGradient& e) {
        throw TrainingDiverged(epoch, bi, std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", batch " +
                                              std::to_string(bi));
      }
    }

    std::vector<MetricsRecord> records;
    double od_easy = -1;
    for (const auto& split : config.eval_splits) {
      auto r = evaluate(model, data.get(split));
      r.epoch = epoch;
      r.model = config.model.kind;
      r.task = config.task;
      r.seed = config.seed;
      r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      if (split == "od_easy") od_easy = r.sequence_accuracy;
      records.push_back(r);
    }
    result.metrics.insert(result.metrics.end(), records.begin(), records.end());
    if (on_epoch) on_epoch(epoch, records);

    // Strictly greater keeps the earlier epoch on ties; without an OD-easy
    // split the latest epoch is kept.
    if (!select_on_od_easy || od_easy > result.best_od_easy) {
      result.best_od_easy = od_easy;
      result.best_epoch = epoch;
      best = snapshot(params);
    }
    if (config.early_stop && select_on_od_easy && od_easy >= 1.0) {
      result.stopped_early = epoch < config.epochs;
      break;
    }
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (config.time_budget_seconds > 0 && elapsed > config.time_budget_seconds) {
      result.stopped_early = epoch < config.epochs;
      break;
    }
  }
  restore(params, best);
  result.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  if (!config.output_dir.empty()) {
    const std::filesystem::path dir(config.output_dir);
    std::filesystem::create_directories(dir);
    nlohmann::json meta = {{"config", config}, {"best_epoch", result.best_epoch},
                           {"best_od_easy_sequence_accuracy", result.best_od_easy}};
    save_checkpoint(dir / "checkpoint.json", params, meta);
    std::ofstream log(dir / "metrics.jsonl");
    if (!log) throw std::runtime_error("cannot write " + (dir / "metrics.jsonl").string());
    for (const auto& r : result.metrics) log << nlohmann::json(r).dump() << '\n';
    std::ofstream cfg(dir / "config.json");
    cfg << nlohmann::json(config).dump(2) << '\n';
  }
  return result;
}

std::unique_ptr<SequenceModel<float>> load_model(const std::filesystem::path& checkpoint, RunConfig* config) {
  const auto doc = read_checkpoint(checkpoint);
  if (!doc.contains("meta") || !doc["meta"].contains("config")) {
    throw std::runtime_error("checkpoint " + checkpoint.string() + " carries no run config");
  }
  const RunConfig rc = doc["meta"]["config"].get<RunConfig>();
  auto model = build_model(rc);
  checkpoint_from_json(doc, model->parameters());
  if (config) *config = rc;
  return model;
}

}  // namespace namlab
