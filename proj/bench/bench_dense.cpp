// Parallel vs serial top-k kernel over random unit vectors.
#include <benchmark/benchmark.h>

#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "ttpmap/dense_kernels.hpp"

namespace {

std::vector<double> unit_rows(std::size_t rows, std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::vector<double> out(rows * dim);
  for (std::size_t r = 0; r < rows; ++r) {
    double norm = 0;
    for (std::size_t d = 0; d < dim; ++d) {
      out[r * dim + d] = nd(rng);
      norm += out[r * dim + d] * out[r * dim + d];
    }
    norm = std::sqrt(norm);
    for (std::size_t d = 0; d < dim; ++d) out[r * dim + d] /= norm;
  }
  return out;
}

struct Workload {
  std::size_t dim = 256;
  std::vector<double> queries;
  std::vector<double> corpus;
  std::vector<std::uint32_t> ranks;

  Workload(std::size_t n_queries, std::size_t n_corpus)
      : queries(unit_rows(n_queries, dim, 1)), corpus(unit_rows(n_corpus, dim, 2)), ranks(n_corpus) {
    std::iota(ranks.begin(), ranks.end(), 0u);
  }
};

void BM_TopkSerial(benchmark::State& state) {
  Workload w(static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(ttpmap::kernels::topk_dot_serial(w.queries, w.corpus, w.dim, 20, w.ranks));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0) * state.range(1));
}

void BM_TopkParallel(benchmark::State& state) {
  Workload w(static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(ttpmap::kernels::topk_dot_parallel(w.queries, w.corpus, w.dim, 20, w.ranks));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0) * state.range(1));
  state.counters["threads"] = ttpmap::kernels::max_threads();
}

// 203 techniques against function counts typical of small and large samples.
BENCHMARK(BM_TopkSerial)->Args({203, 500})->Args({203, 5000})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_TopkParallel)->Args({203, 500})->Args({203, 5000})->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
