#include <filesystem>
#include <fstream>
#include <map>

#include "doctest.h"
#include "namlab/tasks.hpp"
#include "oracles.hpp"

using namespace namlab;

namespace {

using testing::all_digit_lists;

void check_layout(const Sample& s) {
  REQUIRE(s.input.size() == s.target.size());
  bool in_answer = false;
  for (std::size_t t = 0; t < s.length(); ++t) {
    if (s.masked(t)) {
      in_answer = true;
      CHECK((s.target[t] >= 0 && s.target[t] <= 9));
    } else {
      CHECK_FALSE(in_answer);  // MASKs form a suffix
      CHECK(s.target[t] == kPad);
    }
  }
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("namlab_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("worked examples") {
  const auto p = make_palindrome({3, 1, 4});
  CHECK(p.input == std::vector<int>{3, 1, 4, kMask, kMask, kMask});
  CHECK(p.target == std::vector<int>{kPad, kPad, kPad, 4, 1, 3});
  CHECK(p.digits == 3);

  const auto f = make_fibonacci({5}, {8});
  CHECK(f.input == std::vector<int>{5, kSep, 8, kMask, kMask});
  CHECK(f.answer() == std::vector<int>{3, 1});

  const auto r = make_reduce({3, 0, 5, 0, 0, 7});
  CHECK(r.answer() == std::vector<int>{3, 5, 7});
  CHECK(r.input.size() == 9);

  CHECK_THROWS_AS(make_reduce({0, 0}), std::invalid_argument);
  CHECK_THROWS_AS(make_palindrome({}), std::invalid_argument);
  CHECK_THROWS_AS(make_palindrome({1, 10}), std::invalid_argument);
}

TEST_CASE("token and task names") {
  for (int t = 0; t < static_cast<int>(kVocabSize); ++t) CHECK(token_from_string(token_to_string(t)) == t);
  CHECK(token_to_string(kMask) == "MASK");
  CHECK_THROWS_AS(token_from_string("X"), std::invalid_argument);
  CHECK_THROWS_AS(token_to_string(13), std::invalid_argument);
  CHECK(task_from_string("palin") == Task::palindrome);
  CHECK(task_from_string("fib") == Task::fibonacci);
  CHECK(task_from_string(to_string(Task::reduce)) == Task::reduce);
  CHECK_THROWS_AS(task_from_string("sort"), std::invalid_argument);
}

TEST_CASE("palindrome answer is the reversal for every input up to three digits") {
  for (int d = 1; d <= 3; ++d)
    for (const auto& digits : all_digit_lists(d)) {
      const auto s = make_palindrome(digits);
      check_layout(s);
      CHECK(s.answer() == std::vector<int>(digits.rbegin(), digits.rend()));
    }
}

TEST_CASE("fibonacci answer is the integer sum for every pair up to three digits") {
  for (int da = 1; da <= 3; ++da)
    for (int db = 1; db <= 3; ++db)
      for (const auto& a : all_digit_lists(da)) {
        if (da > 1 && a.back() == 0) continue;
        for (const auto& b : all_digit_lists(db)) {
          if (db > 1 && b.back() == 0) continue;
          const auto s = make_fibonacci(a, b);
          check_layout(s);
          CHECK(from_little_endian(s.answer()) == from_little_endian(a) + from_little_endian(b));
          CHECK(s.answer() == little_endian_digits(from_little_endian(a) + from_little_endian(b)));
        }
      }
}

TEST_CASE("fourteen-digit sums") {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 200; ++i) {
    const auto s = gen_fibonacci(14, rng);
    check_layout(s);
    CHECK(s.answer().size() == 14);
    const auto sep = std::find(s.input.begin(), s.input.end(), kSep);
    const std::vector<int> a(s.input.begin(), sep);
    const std::vector<int> b(sep + 1, std::find(s.input.begin(), s.input.end(), kMask));
    CHECK(from_little_endian(s.answer()) == from_little_endian(a) + from_little_endian(b));
  }
  CHECK_THROWS_AS(gen_fibonacci(19, rng), std::invalid_argument);
}

TEST_CASE("reduce answer drops zeros for every input up to three digits") {
  for (int d = 1; d <= 3; ++d)
    for (const auto& seq : all_digit_lists(d)) {
      std::vector<int> nz;
      for (int x : seq)
        if (x) nz.push_back(x);
      if (nz.empty()) {
        CHECK_THROWS_AS(make_reduce(seq), std::invalid_argument);
        continue;
      }
      const auto s = make_reduce(seq);
      check_layout(s);
      CHECK(s.answer() == nz);
    }
}

TEST_CASE("generators honour the length parameter") {
  std::mt19937_64 rng(2);
  for (int d = 1; d <= 10; ++d)
    for (int i = 0; i < 30; ++i) {
      const auto p = gen_palindrome(d, rng);
      CHECK(p.answer().size() == static_cast<std::size_t>(d));
      const auto f = gen_fibonacci(d, rng);
      CHECK(f.answer().size() == static_cast<std::size_t>(d));
      CHECK(f.digits == d);
      const auto r = gen_reduce(d, rng);
      CHECK(r.answer().size() == static_cast<std::size_t>(d));
      // zero gaps between consecutive nonzero digits hold at most three zeros
      int run = 0;
      for (std::size_t t = 0; t < r.length() && !r.masked(t); ++t) {
        run = r.input[t] == 0 ? run + 1 : 0;
        CHECK(run <= 3);
      }
      CHECK(r.input.front() != 0);
    }
}

TEST_CASE("splits are deterministic with balanced length histograms") {
  const auto spec = SplitSpec::desk().scaled(0.25);
  const auto a = build_splits(Task::reduce, spec, 7), b = build_splits(Task::reduce, spec, 7);
  const auto c = build_splits(Task::reduce, spec, 8);
  CHECK(a.train.samples.size() == 800);
  CHECK(a.od_hard.samples.size() == 64);
  bool differs = false;
  for (const auto& split : kSplitNames) {
    const auto &x = a.get(split), &y = b.get(split);
    REQUIRE(x.samples.size() == y.samples.size());
    for (std::size_t i = 0; i < x.samples.size(); ++i) CHECK(x.samples[i].input == y.samples[i].input);
    differs = differs || x.samples[0].input != c.get(split).samples[0].input;
  }
  CHECK(differs);

  std::map<int, std::size_t> hist;
  for (const auto& s : a.train.samples) ++hist[s.digits];
  CHECK(hist.size() == 6);
  for (const auto& [d, n] : hist) CHECK((n == 133 || n == 134));
  for (const auto& s : a.od_easy.samples) CHECK((s.digits == 7 || s.digits == 8));
  for (const auto& s : a.od_hard.samples) CHECK((s.digits >= 9 && s.digits <= 10));
  CHECK_THROWS_AS(a.get("test"), std::invalid_argument);
}

TEST_CASE("split spec presets") {
  const auto p = SplitSpec::paper();
  CHECK(p.train.hi == 10);
  CHECK(p.od_hard.hi == 16);
  CHECK(SplitSpec::desk().scaled(0.0001).id_size == 1);
  CHECK_THROWS_AS(SplitSpec::desk().scaled(0), std::invalid_argument);
}

TEST_CASE("jsonl round trip") {
  const auto dir = temp_dir("jsonl");
  const auto splits = build_splits(Task::fibonacci, SplitSpec::desk().scaled(0.05), 3);
  write_splits(dir, splits);
  CHECK(std::filesystem::exists(split_path(dir, Task::fibonacci, "od_easy")));
  CHECK(split_path(dir, Task::fibonacci, "id").filename() == "fibonacci_id.jsonl");
  const auto back = read_splits(dir, Task::fibonacci);
  for (const auto& split : kSplitNames) {
    const auto &x = splits.get(split), &y = back.get(split);
    CHECK(y.split == split);
    REQUIRE(x.samples.size() == y.samples.size());
    for (std::size_t i = 0; i < x.samples.size(); ++i) {
      CHECK(x.samples[i].input == y.samples[i].input);
      CHECK(x.samples[i].target == y.samples[i].target);
      CHECK(x.samples[i].digits == y.samples[i].digits);
    }
  }
  std::ifstream in(split_path(dir, Task::fibonacci, "id"));
  std::string line;
  std::getline(in, line);
  CHECK(line.rfind("{\"task\":\"fibonacci\",\"split\":\"id\",\"d\":", 0) == 0);
}

TEST_CASE("jsonl errors name the file and line") {
  const auto dir = temp_dir("jsonl_bad");
  const auto path = dir / "bad.jsonl";
  {
    std::ofstream out(path);
    out << R"({"task":"reduce","split":"id","d":1,"input":["1","MASK"],"target":["PAD","1"]})" << "\n";
    out << R"({"task":"reduce","split":"id","d":1,"input":["1","BOGUS"],"target":["PAD","1"]})" << "\n";
  }
  try {
    read_jsonl(path);
    FAIL("expected a throw");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("bad.jsonl:2") != std::string::npos);
  }
  CHECK_THROWS(read_jsonl(dir / "missing.jsonl"));
  CHECK_THROWS(read_splits(dir, Task::palindrome));
}

TEST_CASE("independent oracle sweep finds no mismatches") {
  const auto c = testing::task_oracle_sweep(3);
  CHECK(c.checked > 1000000);
  CHECK(c.mismatched == 0);
}
