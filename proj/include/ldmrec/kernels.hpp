#pragma once

// Dense compute kernels. Two implementations share one interface:
//   kernels::serial - plain loops, the reference used by tests
//   kernels::omp    - OpenMP-parallel over output rows
// Each output element is accumulated by exactly one thread in a fixed order,
// so the parallel results are bit-identical for any thread count.

#include "ldmrec/dense_matrix.hpp"

namespace ldmrec::kernels {

namespace serial {
// c = a * b
void matmul(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& c);
// c = a * b^T
void matmul_bt(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& c);
// c = a^T * b
void matmul_at(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& c);
}  // namespace serial

namespace omp {
void matmul(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& c);
void matmul_bt(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& c);
void matmul_at(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& c);
}  // namespace omp

// Threads used by the omp kernels and by per-user loops elsewhere.
void set_num_workers(int n);
int num_workers();

// Shape-checked wrappers over the omp kernels; allocate the result.
DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix matmul_bt(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix matmul_at(const DenseMatrix& a, const DenseMatrix& b);

}  // namespace ldmrec::kernels
