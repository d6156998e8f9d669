#include "ldmrec/kernels.hpp"

#include <omp.h>

#include <atomic>
#include <cstddef>

#include "ldmrec/errors.hpp"

namespace ldmrec::kernels {

namespace {

std::atomic<int> g_workers{1};

// Below this many multiply-adds the thread fork costs more than it saves.
constexpr std::size_t kParallelThreshold = 1u << 15;

void require(bool ok, const char* what) {
  if (!ok) throw DimensionError(what);
}

}  // namespace

void set_num_workers(int n) { g_workers.store(n < 1 ? 1 : n); }
int num_workers() { return g_workers.load(); }

namespace serial {

void matmul(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& c) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a(i, p) * b(p, j);
      c(i, j) = s;
    }
  }
}

void matmul_bt(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& c) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a(i, p) * b(j, p);
      c(i, j) = s;
    }
  }
}

void matmul_at(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& c) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < m; ++p) s += a(p, i) * b(p, j);
      c(i, j) = s;
    }
  }
}

}  // namespace serial

namespace omp {

void matmul(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& c) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  const double* A = a.data();
  const double* B = b.data();
  double* C = c.data();
  const bool par = m * k * n >= kParallelThreshold && num_workers() > 1;
#pragma omp parallel for schedule(static) num_threads(num_workers()) if (par)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(m); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    double* crow = C + i * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] = 0.0;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void matmul_bt(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& c) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  const double* A = a.data();
  const double* B = b.data();
  double* C = c.data();
  const bool par = m * k * n >= kParallelThreshold && num_workers() > 1;
#pragma omp parallel for schedule(static) num_threads(num_workers()) if (par)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(m); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const double* arow = A + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = B + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      C[i * n + j] = s;
    }
  }
}

void matmul_at(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& c) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  const double* A = a.data();
  const double* B = b.data();
  double* C = c.data();
  const bool par = m * k * n >= kParallelThreshold && num_workers() > 1;
#pragma omp parallel for schedule(static) num_threads(num_workers()) if (par)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(k); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    double* crow = C + i * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] = 0.0;
    for (std::size_t p = 0; p < m; ++p) {
      const double av = A[p * k + i];
      if (av == 0.0) continue;
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace omp

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  require(a.cols() == b.rows(), "matmul: a.cols != b.rows");
  DenseMatrix c(a.rows(), b.cols());
  omp::matmul(a, b, c);
  return c;
}

DenseMatrix matmul_bt(const DenseMatrix& a, const DenseMatrix& b) {
  require(a.cols() == b.cols(), "matmul_bt: a.cols != b.cols");
  DenseMatrix c(a.rows(), b.rows());
  omp::matmul_bt(a, b, c);
  return c;
}

DenseMatrix matmul_at(const DenseMatrix& a, const DenseMatrix& b) {
  require(a.rows() == b.rows(), "matmul_at: a.rows != b.rows");
  DenseMatrix c(a.cols(), b.cols());
  omp::matmul_at(a, b, c);
  return c;
}

}  // namespace ldmrec::kernels
