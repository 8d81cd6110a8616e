// Serial reference versus OpenMP kernels on clustering- and metric-sized inputs.
// Thread count follows OMP_NUM_THREADS.

#include "proxyfair/clustering.hpp"
#include "proxyfair/kernels.hpp"

#include <benchmark/benchmark.h>

using namespace proxyfair;

namespace {

Matrix points(Index rows, Index cols) {
  Rng rng(rows * 31 + cols);
  std::normal_distribution<double> normal;
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

Labels coins(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::bernoulli_distribution coin(0.4);
  Labels out(n);
  for (auto& l : out) l = coin(rng);
  return out;
}

template <bool Parallel>
void NearestCentroid(benchmark::State& state) {
  const Matrix p = points(state.range(0), 32), c = points(2, 32);
  Labels labels(static_cast<std::size_t>(p.rows()));
  std::vector<double> d(labels.size());
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::parallel::nearest_centroid(p, c, labels, d);
    else
      kernels::serial::nearest_centroid(p, c, labels, d);
    benchmark::DoNotOptimize(d.data());
  }
  state.SetItemsProcessed(state.iterations() * p.rows());
}

template <bool Parallel>
void NearestWard(benchmark::State& state) {
  const Matrix c = points(state.range(0), 32);
  const std::vector<double> sizes(static_cast<std::size_t>(c.rows()), 1.0);
  const std::vector<std::uint8_t> active(sizes.size(), 1);
  Index q = 0;
  for (auto _ : state) {
    const auto r = Parallel ? kernels::parallel::nearest_ward(c, sizes, active, q)
                            : kernels::serial::nearest_ward(c, sizes, active, q);
    benchmark::DoNotOptimize(r);
    q = (q + 1) % c.rows();
  }
  state.SetItemsProcessed(state.iterations() * c.rows());
}

template <bool Parallel>
void SquaredDistances(benchmark::State& state) {
  const Matrix p = points(state.range(0), 16);
  for (auto _ : state) {
    Matrix d = Parallel ? kernels::parallel::squared_distances(p) : kernels::serial::squared_distances(p);
    benchmark::DoNotOptimize(d.data());
  }
  state.SetItemsProcessed(state.iterations() * p.rows() * p.rows());
}

template <bool Parallel>
void GroupConfusion(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Labels pred = coins(n, 1), y = coins(n, 2), s = coins(n, 3);
  for (auto _ : state) {
    const auto g = Parallel ? kernels::parallel::group_confusion(pred, y, s)
                            : kernels::serial::group_confusion(pred, y, s);
    benchmark::DoNotOptimize(g);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}

void KMeansAdultScale(benchmark::State& state) {
  const Matrix p = points(state.range(0), 32);
  for (auto _ : state) benchmark::DoNotOptimize(kmeans(p, 2, 1, 7).inertia);
}

void WardChain(benchmark::State& state) {
  const Matrix p = points(state.range(0), 32);
  for (auto _ : state) benchmark::DoNotOptimize(hierarchical(p).merges.size());
}

}  // namespace

BENCHMARK_TEMPLATE(NearestCentroid, false)->Name("nearest_centroid/serial")->Range(1 << 10, 1 << 16);
BENCHMARK_TEMPLATE(NearestCentroid, true)->Name("nearest_centroid/parallel")->Range(1 << 10, 1 << 16);
BENCHMARK_TEMPLATE(NearestWard, false)->Name("nearest_ward/serial")->Range(1 << 10, 1 << 15);
BENCHMARK_TEMPLATE(NearestWard, true)->Name("nearest_ward/parallel")->Range(1 << 10, 1 << 15);
BENCHMARK_TEMPLATE(SquaredDistances, false)->Name("squared_distances/serial")->Range(1 << 8, 1 << 12);
BENCHMARK_TEMPLATE(SquaredDistances, true)->Name("squared_distances/parallel")->Range(1 << 8, 1 << 12);
BENCHMARK_TEMPLATE(GroupConfusion, false)->Name("group_confusion/serial")->Range(1 << 12, 1 << 20);
BENCHMARK_TEMPLATE(GroupConfusion, true)->Name("group_confusion/parallel")->Range(1 << 12, 1 << 20);
BENCHMARK(KMeansAdultScale)->Name("kmeans/dispatch")->Arg(45222)->Unit(benchmark::kMillisecond);
BENCHMARK(WardChain)->Name("ward_chain/dispatch")->Arg(4000)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
