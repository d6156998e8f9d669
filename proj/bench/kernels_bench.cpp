// Serial reference kernels against the OpenMP kernels on CNet-shaped
// products: a batch of users times the item layer.

#include <random>

#include <benchmark/benchmark.h>

#include "ldmrec/kernels.hpp"

namespace {

using ldmrec::DenseMatrix;
namespace k = ldmrec::kernels;

DenseMatrix random_matrix(std::size_t r, std::size_t c, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  DenseMatrix m(r, c);
  for (auto& x : m.values()) x = u(rng);
  return m;
}

// args: batch, items, hidden
template <void (*Kernel)(const DenseMatrix&, const DenseMatrix&, DenseMatrix&)>
void BM_matmul_bt(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  const auto items = static_cast<std::size_t>(state.range(1));
  const auto hidden = static_cast<std::size_t>(state.range(2));
  k::set_num_workers(static_cast<int>(state.range(3)));
  auto x = random_matrix(batch, items, 1);
  auto w = random_matrix(hidden, items, 2);
  DenseMatrix out(batch, hidden);
  for (auto _ : state) {
    Kernel(x, w, out);
    benchmark::DoNotOptimize(out.values().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(batch * items * hidden));
}

template <void (*Kernel)(const DenseMatrix&, const DenseMatrix&, DenseMatrix&)>
void BM_matmul_at(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  const auto items = static_cast<std::size_t>(state.range(1));
  const auto hidden = static_cast<std::size_t>(state.range(2));
  k::set_num_workers(static_cast<int>(state.range(3)));
  auto grad = random_matrix(batch, hidden, 3);
  auto x = random_matrix(batch, items, 4);
  DenseMatrix out(hidden, items);
  for (auto _ : state) {
    Kernel(grad, x, out);
    benchmark::DoNotOptimize(out.values().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(batch * items * hidden));
}

template <void (*Kernel)(const DenseMatrix&, const DenseMatrix&, DenseMatrix&)>
void BM_matmul(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  const auto items = static_cast<std::size_t>(state.range(1));
  const auto hidden = static_cast<std::size_t>(state.range(2));
  k::set_num_workers(static_cast<int>(state.range(3)));
  auto h = random_matrix(batch, hidden, 5);
  auto w = random_matrix(hidden, items, 6);
  DenseMatrix out(batch, items);
  for (auto _ : state) {
    Kernel(h, w, out);
    benchmark::DoNotOptimize(out.values().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(batch * items * hidden));
}

void shapes(benchmark::internal::Benchmark* b, bool threads) {
  for (auto [batch, items, hidden] : {std::tuple{32, 100, 64}, std::tuple{400, 2000, 256}}) {
    if (threads) {
      for (int w : {1, 2, 4}) b->Args({batch, items, hidden, w});
    } else {
      b->Args({batch, items, hidden, 1});
    }
  }
  b->ArgNames({"batch", "items", "hidden", "workers"})->Unit(benchmark::kMicrosecond);
}

void serial_shapes(benchmark::internal::Benchmark* b) { shapes(b, false); }
void omp_shapes(benchmark::internal::Benchmark* b) { shapes(b, true); }

}  // namespace

BENCHMARK(BM_matmul_bt<k::serial::matmul_bt>)->Name("matmul_bt/serial")->Apply(serial_shapes);
BENCHMARK(BM_matmul_bt<k::omp::matmul_bt>)->Name("matmul_bt/omp")->Apply(omp_shapes);
BENCHMARK(BM_matmul_at<k::serial::matmul_at>)->Name("matmul_at/serial")->Apply(serial_shapes);
BENCHMARK(BM_matmul_at<k::omp::matmul_at>)->Name("matmul_at/omp")->Apply(omp_shapes);
BENCHMARK(BM_matmul<k::serial::matmul>)->Name("matmul/serial")->Apply(serial_shapes);
BENCHMARK(BM_matmul<k::omp::matmul>)->Name("matmul/omp")->Apply(omp_shapes);

BENCHMARK_MAIN();
