#include "namlab/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace namlab {

namespace {

void check_digits(const std::vector<int>& digits, const char* what) {
  for (int x : digits)
    if (x < 0 || x > 9) throw std::invalid_argument(std::string(what) + ": token " + std::to_string(x) + " is not a digit");
}

Sample finish(std::vector<int> problem, const std::vector<int>& answer, int d) {
  Sample s;
  s.digits = d;
  s.target.assign(problem.size(), kPad);
  s.input = std::move(problem);
  for (int a : answer) {
    s.input.push_back(kMask);
    s.target.push_back(a);
  }
  return s;
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

}  // namespace

std::string token_to_string(int token) {
  if (token >= 0 && token <= 9) return std::string(1, static_cast<char>('0' + token));
  if (token == kSep) return "SEP";
  if (token == kMask) return "MASK";
  if (token == kPad) return "PAD";
  throw std::invalid_argument("unknown token id " + std::to_string(token));
}

int token_from_string(const std::string& text) {
  if (text.size() == 1 && text[0] >= '0' && text[0] <= '9') return text[0] - '0';
  if (text == "SEP") return kSep;
  if (text == "MASK") return kMask;
  if (text == "PAD") return kPad;
  throw std::invalid_argument("unknown token '" + text + "'");
}

std::string to_string(Task task) {
  switch (task) {
    case Task::palindrome: return "palindrome";
    case Task::fibonacci: return "fibonacci";
    case Task::reduce: return "reduce";
  }
  return "?";
}

Task task_from_string(const std::string& name) {
  if (name == "palindrome" || name == "palin") return Task::palindrome;
  if (name == "fibonacci" || name == "fib") return Task::fibonacci;
  if (name == "reduce") return Task::reduce;
  throw std::invalid_argument("unknown task '" + name + "' (expected palindrome, fibonacci or reduce)");
}

std::vector<int> Sample::answer() const {
  std::vector<int> out;
  for (std::size_t t = 0; t < input.size(); ++t)
    if (input[t] == kMask) out.push_back(target[t]);
  return out;
}

Sample make_palindrome(const std::vector<int>& digits) {
  if (digits.empty()) throw std::invalid_argument("palindrome: at least one digit required");
  check_digits(digits, "palindrome");
  return finish(digits, {digits.rbegin(), digits.rend()}, static_cast<int>(digits.size()));
}

std::vector<int> little_endian_digits(std::uint64_t value) {
  std::vector<int> out;
  do {
    out.push_back(static_cast<int>(value % 10));
    value /= 10;
  } while (value != 0);
  return out;
}

std::uint64_t from_little_endian(const std::vector<int>& digits) {
  if (digits.size() > 19) throw std::overflow_error("from_little_endian: more than 19 digits");
  std::uint64_t v = 0;
  for (auto it = digits.rbegin(); it != digits.rend(); ++it) v = v * 10 + static_cast<std::uint64_t>(*it);
  return v;
}

Sample make_fibonacci(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("fibonacci: empty operand");
  check_digits(a, "fibonacci");
  check_digits(b, "fibonacci");
  std::vector<int> sum;
  int carry = 0;
  for (std::size_t i = 0; i < std::max(a.size(), b.size()); ++i) {
    const int s = (i < a.size() ? a[i] : 0) + (i < b.size() ? b[i] : 0) + carry;
    sum.push_back(s % 10);
    carry = s / 10;
  }
  if (carry) sum.push_back(carry);
  while (sum.size() > 1 && sum.back() == 0) sum.pop_back();
  std::vector<int> problem = a;
  problem.push_back(kSep);
  problem.insert(problem.end(), b.begin(), b.end());
  return finish(std::move(problem), sum, static_cast<int>(sum.size()));
}

Sample make_reduce(const std::vector<int>& sequence) {
  check_digits(sequence, "reduce");
  std::vector<int> answer;
  std::copy_if(sequence.begin(), sequence.end(), std::back_inserter(answer), [](int x) { return x != 0; });
  if (answer.empty()) throw std::invalid_argument("reduce: sequence has no nonzero digit");
  return finish(sequence, answer, static_cast<int>(answer.size()));
}

Sample gen_palindrome(int d, std::mt19937_64& rng) {
  if (d < 1) throw std::invalid_argument("palindrome: d must be >= 1");
  std::vector<int> digits(static_cast<std::size_t>(d));
  for (auto& x : digits) x = uniform_int(rng, 0, 9);
  return make_palindrome(digits);
}

Sample gen_fibonacci(int d, std::mt19937_64& rng) {
  if (d < 1 || d > 18) throw std::invalid_argument("fibonacci: d must be in 1..18, got " + std::to_string(d));
  const auto seed_bound = static_cast<std::uint64_t>(std::pow(10.0, std::max(1, d - 2)));
  std::uniform_int_distribution<std::uint64_t> seed_dist(0, seed_bound - 1);
  for (;;) {
    std::uint64_t a = seed_dist(rng), b = seed_dist(rng);
    if (a == 0 && b == 0 && d > 1) continue;
    while (little_endian_digits(a + b).size() < static_cast<std::size_t>(d)) {
      const std::uint64_t next = a + b;
      a = b;
      b = next;
    }
    if (little_endian_digits(a + b).size() == static_cast<std::size_t>(d)) {
      return make_fibonacci(little_endian_digits(a), little_endian_digits(b));
    }
  }
}

Sample gen_reduce(int d, std::mt19937_64& rng) {
  if (d < 1) throw std::invalid_argument("reduce: d must be >= 1");
  std::vector<int> sequence;
  for (int i = 0; i < d; ++i) {
    if (i > 0)
      for (int z = uniform_int(rng, 0, 3); z > 0; --z) sequence.push_back(0);
    sequence.push_back(uniform_int(rng, 1, 9));
  }
  return make_reduce(sequence);
}

Sample generate(Task task, int d, std::mt19937_64& rng) {
  switch (task) {
    case Task::palindrome: return gen_palindrome(d, rng);
    case Task::fibonacci: return gen_fibonacci(d, rng);
    case Task::reduce: return gen_reduce(d, rng);
  }
  throw std::invalid_argument("generate: bad task");
}

SplitSpec SplitSpec::desk() { return {}; }

SplitSpec SplitSpec::paper() {
  SplitSpec s;
  s.train = {1, 10};
  s.id = {5, 10};
  s.od_easy = {11, 13};
  s.od_hard = {14, 16};
  s.train_size = 25600;
  s.id_size = s.od_easy_size = s.od_hard_size = 2048;
  return s;
}

SplitSpec SplitSpec::scaled(double factor) const {
  if (!(factor > 0)) throw std::invalid_argument("SplitSpec::scaled: factor must be positive");
  auto f = [factor](std::size_t n) { return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(n * factor))); };
  SplitSpec s = *this;
  s.train_size = f(train_size);
  s.id_size = f(id_size);
  s.od_easy_size = f(od_easy_size);
  s.od_hard_size = f(od_hard_size);
  return s;
}

const Dataset& TaskSplits::get(const std::string& split) const {
  if (split == "train") return train;
  if (split == "id") return id;
  if (split == "od_easy") return od_easy;
  if (split == "od_hard") return od_hard;
  throw std::invalid_argument("unknown split '" + split + "'");
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(seed) ^ a) ^ b);
}

TaskSplits build_splits(Task task, const SplitSpec& spec, std::uint64_t seed) {
  auto build = [&](const std::string& name, std::uint64_t index, DigitRange range, std::size_t size) {
    if (range.lo < 1 || range.hi < range.lo) {
      throw std::invalid_argument("split " + name + ": bad digit range " + std::to_string(range.lo) + ".." +
                                  std::to_string(range.hi));
    }
    Dataset ds{task, name, {}};
    ds.samples.reserve(size);
    const auto span = static_cast<std::size_t>(range.hi - range.lo + 1);
    for (std::size_t i = 0; i < size; ++i) {
      std::mt19937_64 rng(derive_seed(seed, index, i));
      ds.samples.push_back(generate(task, range.lo + static_cast<int>(i % span), rng));
    }
    return ds;
  };
  return {build("train", 0, spec.train, spec.train_size), build("id", 1, spec.id, spec.id_size),
          build("od_easy", 2, spec.od_easy, spec.od_easy_size), build("od_hard", 3, spec.od_hard, spec.od_hard_size)};
}

void write_jsonl(const std::filesystem::path& path, const Dataset& data) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write dataset " + path.string());
  for (const auto& s : data.samples) {
    nlohmann::json in = nlohmann::json::array(), tg = nlohmann::json::array();
    for (int t : s.input) in.push_back(token_to_string(t));
    for (int t : s.target) tg.push_back(token_to_string(t));
    nlohmann::ordered_json rec;
    rec["task"] = to_string(data.task);
    rec["split"] = data.split;
    rec["d"] = s.digits;
    rec["input"] = in;
    rec["target"] = tg;
    out << rec.dump() << '\n';
  }
  if (!out) throw std::runtime_error("write failed for dataset " + path.string());
}

Dataset read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset " + path.string());
  Dataset ds;
  std::string line;
  std::size_t lineno = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto rec = nlohmann::json::parse(line);
      const Task task = task_from_string(rec.at("task").get<std::string>());
      if (first) {
        ds.task = task;
        ds.split = rec.value("split", std::string());
        first = false;
      } else if (task != ds.task) {
        throw std::runtime_error("mixed tasks in one file");
      }
      Sample s;
      s.digits = rec.at("d").get<int>();
      for (const auto& t : rec.at("input")) s.input.push_back(token_from_string(t.get<std::string>()));
      for (const auto& t : rec.at("target")) s.target.push_back(token_from_string(t.get<std::string>()));
      if (s.input.size() != s.target.size() || s.input.empty()) throw std::runtime_error("input/target lengths differ");
      ds.samples.push_back(std::move(s));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return ds;
}

std::filesystem::path split_path(const std::filesystem::path& dir, Task task, const std::string& split) {
  return dir / (to_string(task) + "_" + split + ".jsonl");
}

void write_splits(const std::filesystem::path& dir, const TaskSplits& splits) {
  for (const auto& name : kSplitNames) write_jsonl(split_path(dir, splits.get(name).task, name), splits.get(name));
}

TaskSplits read_splits(const std::filesystem::path& dir, Task task) {
  TaskSplits s;
  for (const auto& name : kSplitNames) {
    const auto path = split_path(dir, task, name);
    if (!std::filesystem::exists(path)) throw std::runtime_error("missing dataset " + path.string());
    Dataset ds = read_jsonl(path);
    ds.task = task;
    ds.split = name;
    if (name == "train") s.train = std::move(ds);
    else if (name == "id") s.id = std::move(ds);
    else if (name == "od_easy") s.od_easy = std::move(ds);
    else s.od_hard = std::move(ds);
  }
  return s;
}

}  // namespace namlab
