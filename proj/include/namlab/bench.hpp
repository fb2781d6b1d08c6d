#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace namlab {

struct BenchConfig {
  std::vector<std::size_t> lengths{256, 512, 1024, 2048, 4096};
  std::size_t d = 64;
  std::size_t heads = 1;
  std::size_t repeats = 7;
  std::size_t warmup = 1;
  std::vector<std::string> impls{"noa", "sdp"};
  std::uint64_t seed = 0;
};

struct BenchRow {
  std::string impl;
  std::size_t length = 0;
  std::size_t d = 0;
  std::size_t heads = 0;
  double mean_ms = 0;
  double p50_ms = 0;
  std::size_t peak_state_bytes = 0;
  bool unresolved = false;  // timings too close to the clock resolution to trust
};

// Smallest observable steady_clock increment, in milliseconds.
double timer_resolution_ms();

// Times multi-head attention over [S, d] inputs (forward only, float).
std::vector<BenchRow> run_attention_bench(const BenchConfig& config);

// t(2S) / t(S) on p50 for consecutive doubled lengths of one impl:
// pairs (S, ratio), where S is the larger length.
std::vector<std::pair<std::size_t, double>> doubling_ratios(const std::vector<BenchRow>& rows, const std::string& impl);

void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows);

}  // namespace namlab
