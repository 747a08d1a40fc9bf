// Serial reference vs OpenMP kernels. Thread count comes from OMP_NUM_THREADS.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "decc/kernels.hpp"

namespace k = decc::kernels;

namespace {

struct Data {
  std::vector<std::uint8_t> verdicts, correct;
  std::vector<double> scores, thresholds;
};

Data make(std::size_t n) {
  std::mt19937_64 rng(n);
  std::uniform_real_distribution<double> u(1.0, 2.0);
  Data d;
  d.verdicts.resize(n);
  d.correct.resize(n);
  d.scores.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    d.verdicts[i] = rng() & 1;
    d.correct[i] = rng() & 1;
    d.scores[i] = u(rng);
  }
  for (int t = 0; t <= 20; ++t) d.thresholds.push_back(1.0 + t * 0.05);
  return d;
}

template <auto Fn>
void BM_count(benchmark::State& st) {
  const auto d = make(static_cast<std::size_t>(st.range(0)));
  for (auto _ : st) benchmark::DoNotOptimize(Fn(d.verdicts, d.correct));
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

template <auto Fn>
void BM_sweep(benchmark::State& st) {
  const auto d = make(static_cast<std::size_t>(st.range(0)));
  std::vector<k::BinaryCounts> out(d.thresholds.size());
  for (auto _ : st) {
    Fn(d.scores, d.correct, d.thresholds, k::ThresholdDirection::reliable_if_leq, out);
    benchmark::ClobberMemory();
  }
  st.SetItemsProcessed(st.iterations() * st.range(0) * static_cast<long>(d.thresholds.size()));
}

}  // namespace

BENCHMARK(BM_count<k::serial::count>)->Name("count/serial")->Range(1 << 10, 1 << 22);
BENCHMARK(BM_count<k::parallel::count>)->Name("count/omp")->Range(1 << 10, 1 << 22);
BENCHMARK(BM_sweep<k::serial::sweep>)->Name("sweep/serial")->Range(1 << 10, 1 << 20);
BENCHMARK(BM_sweep<k::parallel::sweep>)->Name("sweep/omp")->Range(1 << 10, 1 << 20);

BENCHMARK_MAIN();
