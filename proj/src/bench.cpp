#include "namlab/bench.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>

#include "namlab/attention.hpp"
#include "namlab/ops.hpp"

namespace namlab {

double timer_resolution_ms() {
  using clock = std::chrono::steady_clock;
  double best = 1e9;
  for (int i = 0; i < 50; ++i) {
    const auto a = clock::now();
    auto b = clock::now();
    while (b == a) b = clock::now();
    best = std::min(best, std::chrono::duration<double, std::milli>(b - a).count());
  }
  return best;
}

std::vector<BenchRow> run_attention_bench(const BenchConfig& config) {
  if (config.heads == 0 || config.d % config.heads != 0) {
    throw std::invalid_argument("bench: d " + std::to_string(config.d) + " not divisible by " +
                                std::to_string(config.heads) + " heads");
  }
  if (config.repeats == 0) throw std::invalid_argument("bench: repeats must be positive");
  const double resolution = timer_resolution_ms();
  const std::size_t dh = config.d / config.heads;
  NoGradGuard guard;
  std::vector<BenchRow> rows;
  for (const auto& impl : config.impls) {
    const AttentionKind kind = attention_kind_from_string(impl);
    for (std::size_t S : config.lengths) {
      if (S == 0) throw std::invalid_argument("bench: sequence length 0");
      std::mt19937_64 rng(config.seed + S);
      std::normal_distribution<float> g(0.f, 1.f);
      auto rand = [&](std::size_t n) {
        std::vector<float> v(n);
        for (auto& x : v) x = g(rng);
        return Tensor<float>::from_data({S, config.d}, std::move(v));
      };
      const auto q = rand(S * config.d), k = rand(S * config.d), v = rand(S * config.d);
      std::size_t peak = 0;
      auto run = [&] {
        std::size_t state = 0;
        std::vector<Tensor<float>> outs;
        for (std::size_t h = 0; h < config.heads; ++h) {
          AttentionBatch<float> b{slice(q, h * dh, (h + 1) * dh), slice(k, h * dh, (h + 1) * dh),
                                  slice(v, h * dh, (h + 1) * dh)};
          AttentionStats st;
          outs.push_back(kind == AttentionKind::noa ? noa_self_attention(b, &st) : sdp_attention(b, 0.f, &st));
          state += st.state_bytes;
        }
        peak = std::max(peak, state);
        return concat(outs);
      };
      for (std::size_t w = 0; w < config.warmup; ++w) run();
      std::vector<double> times;
      for (std::size_t r = 0; r < config.repeats; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto out = run();
        times.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
        if (out.dim(0) != S) throw std::logic_error("bench: unexpected output shape");
      }
      std::vector<double> sorted = times;
      std::sort(sorted.begin(), sorted.end());
      BenchRow row;
      row.impl = impl;
      row.length = S;
      row.d = config.d;
      row.heads = config.heads;
      row.mean_ms = std::accumulate(times.begin(), times.end(), 0.0) / static_cast<double>(times.size());
      row.p50_ms = sorted[sorted.size() / 2];
      row.peak_state_bytes = peak;
      row.unresolved = row.p50_ms < 100 * resolution;
      rows.push_back(row);
    }
  }
  return rows;
}

std::vector<std::pair<std::size_t, double>> doubling_ratios(const std::vector<BenchRow>& rows, const std::string& impl) {
  std::vector<const BenchRow*> sel;
  for (const auto& r : rows)
    if (r.impl == impl) sel.push_back(&r);
  std::sort(sel.begin(), sel.end(), [](auto* a, auto* b) { return a->length < b->length; });
  std::vector<std::pair<std::size_t, double>> out;
  for (std::size_t i = 1; i < sel.size(); ++i)
    if (sel[i]->length == 2 * sel[i - 1]->length && sel[i - 1]->p50_ms > 0)
      out.emplace_back(sel[i]->length, sel[i]->p50_ms / sel[i - 1]->p50_ms);
  return out;
}

void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows) {
  out << "impl,S,d,H,mean_ms,p50_ms,peak_state_bytes,flag\n";
  for (const auto& r : rows) {
    out << r.impl << ',' << r.length << ',' << r.d << ',' << r.heads << ',' << r.mean_ms << ',' << r.p50_ms << ','
        << r.peak_state_bytes << ',' << (r.unresolved ? "below_timer_resolution" : "") << '\n';
  }
}

}  // namespace namlab
