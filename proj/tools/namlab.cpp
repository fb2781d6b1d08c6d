#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "namlab/bench.hpp"
#include "namlab/fewshot.hpp"
#include "namlab/harness.hpp"
#include "namlab/report.hpp"
#include "namlab/tasks.hpp"

using namespace namlab;

namespace {

void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

}  // namespace

int main(int argc, char** argv) {
  flush_denormals_to_zero();
  CLI::App app{"namlab: neural attention memory models, tasks and benchmarks"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate task splits as JSON-lines files");
  std::string gen_task = "reduce", gen_out = "data", gen_scale = "desk";
  std::uint64_t gen_seed = 0;
  double gen_factor = 1.0;
  gen->add_option("--task", gen_task, "palindrome | fibonacci | reduce")->capture_default_str();
  gen->add_option("--seed", gen_seed, "Generator seed")->capture_default_str();
  gen->add_option("--out", gen_out, "Output directory")->capture_default_str();
  gen->add_option("--scale", gen_scale, "desk | paper")->capture_default_str();
  gen->add_option("--size-factor", gen_factor, "Multiply every split size")->capture_default_str();

  // train
  auto* tr = app.add_subcommand("train", "Train a model on a task");
  RunConfig rc;
  std::string tr_config, tr_data;
  bool no_jump = false;
  tr->add_option("--config", tr_config, "JSON run config (flags given explicitly override it)");
  tr->add_option("--model", rc.model.kind, "lsam | namtm | namtm-nojump | noa-encoder | sdp-encoder")->capture_default_str();
  tr->add_flag("--no-jump", no_jump, "Disable the JUMP head action (NAM-TM ablation)");
  tr->add_option("--task", rc.task, "palindrome | fibonacci | reduce")->capture_default_str();
  tr->add_option("--data", tr_data, "Directory written by gen-data (default: generate in memory)");
  tr->add_option("--scale", rc.scale, "desk | paper (in-memory data)")->capture_default_str();
  tr->add_option("--size-factor", rc.size_factor, "Split size multiplier (in-memory data)")->capture_default_str();
  tr->add_option("--data-seed", rc.data_seed, "Seed for in-memory data")->capture_default_str();
  tr->add_option("--seed", rc.seed, "Initialization and shuffling seed")->capture_default_str();
  tr->add_option("--epochs", rc.epochs, "Maximum epochs")->capture_default_str();
  tr->add_option("--lr", rc.lr, "Adam learning rate")->capture_default_str();
  tr->add_option("--batch-size", rc.batch_size, "Batch size")->capture_default_str();
  tr->add_option("--clip", rc.clip_norm, "Gradient norm clip (<= 0 disables)")->capture_default_str();
  tr->add_option("--d", rc.model.d, "Model width")->capture_default_str();
  tr->add_option("--layers", rc.model.layers, "Layer count")->capture_default_str();
  tr->add_option("--heads", rc.model.heads, "Head count (lsam, encoders)")->capture_default_str();
  tr->add_option("--controller-hidden", rc.model.controller_hidden, "NAM-TM controller width")->capture_default_str();
  tr->add_option("--tape-factor", rc.model.tape_factor, "NAM-TM tape length per token")->capture_default_str();
  tr->add_option("--tape-length", rc.model.tape_length, "Fixed NAM-TM tape length (0 = per sequence)")->capture_default_str();
  tr->add_option("--time-budget", rc.time_budget_seconds, "Stop after this many seconds (0 = none)")->capture_default_str();
  tr->add_option("--out", rc.output_dir, "Directory for checkpoint.json and metrics.jsonl");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset file");
  std::string ev_ckpt, ev_data;
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint.json written by train")->required();
  ev->add_option("--data", ev_data, "JSON-lines dataset")->required();

  // bench
  auto* be = app.add_subcommand("bench", "Time noa vs sdp attention over sequence lengths");
  BenchConfig bc;
  std::string be_out;
  be->add_option("--lengths", bc.lengths, "Sequence lengths")->delimiter(',')->capture_default_str();
  be->add_option("--d", bc.d, "Model width")->capture_default_str();
  be->add_option("--heads", bc.heads, "Head count")->capture_default_str();
  be->add_option("--repeats", bc.repeats, "Timed repetitions")->capture_default_str();
  be->add_option("--impl", bc.impls, "noa and/or sdp")->delimiter(',')->capture_default_str();
  be->add_option("--out", be_out, "CSV path (default stdout)");

  // fewshot
  auto* fs = app.add_subcommand("fewshot", "Synthetic few-shot benchmark: cosine vs NAM head");
  FewShotBenchConfig fc;
  std::size_t fs_seeds = 5;
  std::string fs_out;
  fs->add_option("--seeds", fs_seeds, "Number of seeds")->capture_default_str();
  fs->add_option("--shots", fc.world.shots, "K")->capture_default_str();
  fs->add_option("--ways", fc.world.ways, "N")->capture_default_str();
  fs->add_option("--base", fc.world.base_classes, "B")->capture_default_str();
  fs->add_option("--dim", fc.world.feature_dim, "H")->capture_default_str();
  fs->add_option("--correlation", fc.world.novel_base_correlation, "Novel-to-base center correlation")->capture_default_str();
  fs->add_option("--noise", fc.world.noise, "Feature noise")->capture_default_str();
  fs->add_option("--steps", fc.train.steps, "Gate training steps")->capture_default_str();
  fs->add_option("--episodes", fc.test_episodes, "Test episodes per seed")->capture_default_str();
  fs->add_option("--out", fs_out, "CSV path (default stdout)");

  // report
  auto* rp = app.add_subcommand("report", "Summarize metrics logs: one row per (model, split)");
  std::vector<std::string> rp_logs;
  std::string rp_format = "markdown";
  rp->add_option("logs", rp_logs, "metrics.jsonl files")->required();
  rp->add_option("--format", rp_format, "markdown | csv")->check(CLI::IsMember({"markdown", "csv"}))->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n";
    const CLI::App* failing = &app;
    for (auto* sub : app.get_subcommands()) failing = sub;
    std::cerr << failing->help();
    return 2;
  }

  try {
    if (gen->parsed()) {
      RunConfig tmp;
      tmp.scale = gen_scale;
      tmp.size_factor = gen_factor;
      const auto splits = build_splits(task_from_string(gen_task), tmp.split_spec(), gen_seed);
      write_splits(gen_out, splits);
      for (const auto& s : kSplitNames)
        std::cout << split_path(gen_out, task_from_string(gen_task), s).string() << ' '
                  << splits.get(s).samples.size() << '\n';
    } else if (tr->parsed()) {
      if (!tr_config.empty()) {
        RunConfig file = load_run_config(tr_config);
        // Flags given explicitly take precedence over the file.
        const RunConfig cli = rc;
        rc = file;
        auto given = [&](const char* flag) { return tr->count(flag) > 0; };
        if (given("--model")) rc.model.kind = cli.model.kind;
        if (given("--task")) rc.task = cli.task;
        if (given("--scale")) rc.scale = cli.scale;
        if (given("--size-factor")) rc.size_factor = cli.size_factor;
        if (given("--data-seed")) rc.data_seed = cli.data_seed;
        if (given("--seed")) rc.seed = cli.seed;
        if (given("--epochs")) rc.epochs = cli.epochs;
        if (given("--lr")) rc.lr = cli.lr;
        if (given("--batch-size")) rc.batch_size = cli.batch_size;
        if (given("--clip")) rc.clip_norm = cli.clip_norm;
        if (given("--d")) rc.model.d = cli.model.d;
        if (given("--layers")) rc.model.layers = cli.model.layers;
        if (given("--heads")) rc.model.heads = cli.model.heads;
        if (given("--controller-hidden")) rc.model.controller_hidden = cli.model.controller_hidden;
        if (given("--tape-factor")) rc.model.tape_factor = cli.model.tape_factor;
        if (given("--tape-length")) rc.model.tape_length = cli.model.tape_length;
        if (given("--time-budget")) rc.time_budget_seconds = cli.time_budget_seconds;
        if (given("--out")) rc.output_dir = cli.output_dir;
      }
      if (no_jump) {
        if (rc.model.kind != "namtm" && rc.model.kind != "namtm-nojump") {
          throw std::invalid_argument("--no-jump applies only to --model namtm");
        }
        rc.model.kind = "namtm-nojump";
      }
      const Task task = task_from_string(rc.task);
      const TaskSplits data = tr_data.empty() ? build_splits(task, rc.split_spec(), rc.data_seed) : read_splits(tr_data, task);
      auto model = build_model(rc);
      std::cerr << rc.model.kind << ": " << model->parameters().scalar_count() << " parameters\n";
      const auto result = train(*model, rc, data, [](std::size_t epoch, const std::vector<MetricsRecord>& recs) {
        std::cerr << "epoch " << epoch;
        for (const auto& r : recs) std::cerr << "  " << r.split << " seq=" << r.sequence_accuracy << " tok=" << r.token_accuracy;
        std::cerr << '\n';
      });
      nlohmann::json summary = {{"best_epoch", result.best_epoch},
                                {"best_od_easy_sequence_accuracy", result.best_od_easy},
                                {"stopped_early", result.stopped_early},
                                {"train_seconds", result.train_seconds}};
      std::cout << summary.dump() << '\n';
    } else if (ev->parsed()) {
      RunConfig loaded;
      auto model = load_model(ev_ckpt, &loaded);
      const Dataset data = read_jsonl(ev_data);
      auto r = evaluate(*model, data);
      r.model = loaded.model.kind;
      r.seed = loaded.seed;
      std::cout << nlohmann::json(r).dump() << '\n';
    } else if (be->parsed()) {
      const auto rows = run_attention_bench(bc);
      std::ostringstream csv;
      write_bench_csv(csv, rows);
      emit(be_out, csv.str());
      for (const auto& impl : bc.impls)
        for (const auto& [S, ratio] : doubling_ratios(rows, impl))
          std::cerr << impl << " t(" << S << ")/t(" << S / 2 << ") = " << ratio << '\n';
    } else if (fs->parsed()) {
      fc.seeds.clear();
      for (std::size_t s = 0; s < fs_seeds; ++s) fc.seeds.push_back(s);
      std::ostringstream csv;
      write_fewshot_csv(csv, run_fewshot_bench(fc));
      emit(fs_out, csv.str());
    } else if (rp->parsed()) {
      std::vector<MetricsRecord> all;
      for (const auto& path : rp_logs) {
        auto recs = read_metrics_log(path);
        all.insert(all.end(), recs.begin(), recs.end());
      }
      const auto table = build_report(all);
      if (rp_format == "csv") write_report_csv(std::cout, table);
      else write_report_markdown(std::cout, table);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
