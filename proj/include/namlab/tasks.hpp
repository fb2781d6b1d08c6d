// Algorithmic tasks in masked sequence-completion format.
//
// Every sample is a pair of equal-length token rows. The input holds the
// problem followed by one MASK per answer token; the target holds the answer
// digits at the MASK positions and PAD elsewhere. Numbers are little-endian.
//
//   palindrome  3 1 4 M M M           -> . . . 4 1 3
//   fibonacci   5 SEP 8 M M           -> . . . 3 1        (5 + 8 = 13)
//   reduce      3 0 5 0 0 7 M M M     -> . . . . . . 3 5 7
#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace namlab {

inline constexpr int kSep = 10;
inline constexpr int kMask = 11;
inline constexpr int kPad = 12;
inline constexpr std::size_t kVocabSize = 13;

std::string token_to_string(int token);
int token_from_string(const std::string& text);

enum class Task { palindrome, fibonacci, reduce };

std::string to_string(Task task);
Task task_from_string(const std::string& name);

struct Sample {
  std::vector<int> input;
  std::vector<int> target;
  int digits = 0;  // the task's length parameter d

  std::size_t length() const { return input.size(); }
  bool masked(std::size_t t) const { return input[t] == kMask; }
  // Answer digits read off the MASK positions of the target.
  std::vector<int> answer() const;
};

// Deterministic builders.
Sample make_palindrome(const std::vector<int>& digits);
// a and b as little-endian digit lists; the answer is their sum.
Sample make_fibonacci(const std::vector<int>& a, const std::vector<int>& b);
Sample make_reduce(const std::vector<int>& sequence);

std::vector<int> little_endian_digits(std::uint64_t value);
std::uint64_t from_little_endian(const std::vector<int>& digits);

Sample gen_palindrome(int d, std::mt19937_64& rng);
// Two consecutive terms of a Fibonacci-style sequence whose sum has exactly d
// digits (d <= 18).
Sample gen_fibonacci(int d, std::mt19937_64& rng);
// d nonzero digits with 0-3 zeros in each internal gap.
Sample gen_reduce(int d, std::mt19937_64& rng);
Sample generate(Task task, int d, std::mt19937_64& rng);

struct DigitRange {
  int lo = 1;
  int hi = 1;
};

struct SplitSpec {
  DigitRange train{1, 6}, id{3, 6}, od_easy{7, 8}, od_hard{9, 10};
  std::size_t train_size = 3200, id_size = 256, od_easy_size = 256, od_hard_size = 256;

  static SplitSpec desk();
  static SplitSpec paper();
  // Every size multiplied by factor (at least one sample each).
  SplitSpec scaled(double factor) const;
};

inline const std::vector<std::string> kSplitNames = {"train", "id", "od_easy", "od_hard"};

struct Dataset {
  Task task = Task::reduce;
  std::string split;
  std::vector<Sample> samples;
};

struct TaskSplits {
  Dataset train, id, od_easy, od_hard;
  const Dataset& get(const std::string& split) const;
};

// Digit lengths cycle through each split's range, so histograms are as even
// as the size allows. Sample i of split s draws from its own derived seed.
TaskSplits build_splits(Task task, const SplitSpec& spec, std::uint64_t seed);

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b);

// JSON lines: {"task", "split", "d", "input": [...], "target": [...]} with
// tokens spelled "0".."9", "SEP", "MASK", "PAD".
void write_jsonl(const std::filesystem::path& path, const Dataset& data);
Dataset read_jsonl(const std::filesystem::path& path);

std::filesystem::path split_path(const std::filesystem::path& dir, Task task, const std::string& split);
void write_splits(const std::filesystem::path& dir, const TaskSplits& splits);
TaskSplits read_splits(const std::filesystem::path& dir, Task task);

}  // namespace namlab
