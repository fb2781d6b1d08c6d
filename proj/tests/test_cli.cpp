#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"

#ifndef NAMLAB_CLI_PATH
#error "NAMLAB_CLI_PATH must name the CLI binary"
#endif

namespace {

namespace fs = std::filesystem;

struct Run {
  int code = -1;
  std::string out;
};

Run run(const std::string& args) {
  const fs::path capture = fs::temp_directory_path() / "namlab_cli_capture.txt";
  const std::string cmd = std::string("\"") + NAMLAB_CLI_PATH + "\" " + args + " > \"" + capture.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(capture);
  std::stringstream ss;
  ss << in.rdbuf();
  r.out = ss.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("namlab_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("every subcommand has help") {
  for (const char* sub : {"gen-data", "train", "eval", "bench", "fewshot", "report"}) {
    CAPTURE(sub);
    const auto r = run(std::string(sub) + " --help");
    CHECK(r.code == 0);
    CHECK(r.out.find("--help") != std::string::npos);
  }
  CHECK(run("--help").code == 0);
}

TEST_CASE("unknown flags print usage and exit 2") {
  for (const char* sub : {"gen-data", "train", "eval", "bench", "fewshot", "report"}) {
    CAPTURE(sub);
    const auto r = run(std::string(sub) + " --definitely-not-a-flag");
    CHECK(r.code == 2);
    CHECK(r.out.find("Usage") != std::string::npos);
  }
  CHECK(run("").code == 2);
}

TEST_CASE("gen-data is reproducible") {
  const auto a = temp_dir("gen_a"), b = temp_dir("gen_b");
  REQUIRE(run("gen-data --task reduce --seed 7 --size-factor 0.05 --out " + a.string()).code == 0);
  REQUIRE(run("gen-data --task reduce --seed 7 --size-factor 0.05 --out " + b.string()).code == 0);
  for (const char* split : {"train", "id", "od_easy", "od_hard"}) {
    const std::string f = std::string("reduce_") + split + ".jsonl";
    CHECK(slurp(a / f) == slurp(b / f));
    CHECK(!slurp(a / f).empty());
  }
}

TEST_CASE("train, eval and report round trip") {
  const auto dir = temp_dir("train");
  REQUIRE(run("gen-data --task reduce --seed 1 --size-factor 0.01 --out " + (dir / "data").string()).code == 0);
  const auto t = run("train --model namtm --no-jump --task reduce --data " + (dir / "data").string() +
                     " --epochs 1 --d 8 --layers 1 --controller-hidden 8 --out " + (dir / "run").string());
  INFO(t.out);
  REQUIRE(t.code == 0);
  const auto cfg = slurp(dir / "run" / "config.json");
  CHECK(cfg.find("namtm-nojump") != std::string::npos);

  const auto e = run("eval --checkpoint " + (dir / "run" / "checkpoint.json").string() + " --data " +
                     (dir / "data" / "reduce_id.jsonl").string());
  CHECK(e.code == 0);
  CHECK(e.out.find("sequence_accuracy") != std::string::npos);

  const auto r = run("report " + (dir / "run" / "metrics.jsonl").string());
  CHECK(r.code == 0);
  CHECK(r.out.find("| namtm-nojump | od_easy |") != std::string::npos);

  CHECK(run("train --data " + (dir / "missing").string() + " --epochs 1").code != 0);
  CHECK(run("train --model lsam --no-jump --epochs 0").code != 0);
  CHECK(run("eval --checkpoint " + (dir / "nope.json").string() + " --data x").code != 0);
}
