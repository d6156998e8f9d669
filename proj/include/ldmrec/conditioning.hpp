#pragma once

// Guidance signals for the denoiser, computed once from the training split:
//   collaborative  C = [U ; D_U^-1/2 R D_I^-1/2 I]   (users x 2*rank)
//   modality       m_u = sum_{i in N_u} f_i / sqrt(|N_u| |N_i|)
// Zero-degree users or items contribute 0 instead of an inverse square root.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "ldmrec/data.hpp"
#include "ldmrec/dense_matrix.hpp"

namespace ldmrec {

struct SvdResult {
  DenseMatrix users;                    // rows x rank, orthonormal columns
  std::vector<double> singular_values;  // descending, >= 0
  DenseMatrix items;                    // cols x rank, orthonormal columns
};

struct RandomizedSvdOptions {
  std::size_t rank = 100;
  std::size_t oversample = 10;
  std::size_t power_iters = 4;
  std::uint64_t seed = 0;
};

// Sketch with a Gaussian test matrix, refine with power iterations, then take
// a one-sided Jacobi SVD of the small projected matrix.
SvdResult randomized_svd(const InteractionMatrix& r, const RandomizedSvdOptions& opts);
SvdResult randomized_svd(const DenseMatrix& a, const RandomizedSvdOptions& opts);

// Thin SVD of a dense m x n matrix with m >= n by one-sided Jacobi rotations.
// Singular values come back in descending order.
SvdResult jacobi_svd(const DenseMatrix& a);

// Orthonormalizes the columns of `a` in place (modified Gram-Schmidt, two
// passes). Columns that vanish are replaced by basis completions.
void orthonormalize_columns(DenseMatrix& a);

DenseMatrix collaborative_encode(const InteractionMatrix& r, const DenseMatrix& user_vectors,
                                 const DenseMatrix& item_vectors);

// hops = 1 evaluates the one-hop sum exactly. Larger values keep propagating
// over the normalized bipartite graph: A (A^T A)^(hops-1) F.
DenseMatrix modality_encode(const InteractionMatrix& r, const FeatureMatrix& features, std::size_t hops = 1);

struct ConditionSignals {
  DenseMatrix collaborative;  // users x 2*d_svd
  DenseMatrix visual;         // users x visual dim
  DenseMatrix textual;        // users x text dim
};

struct ConditioningOptions {
  RandomizedSvdOptions svd;
  std::size_t modality_hops = 1;
};

ConditionSignals build_condition_signals(const InteractionMatrix& train, const FeatureMatrix& visual,
                                         const FeatureMatrix& textual, const ConditioningOptions& opts);

// Cache as three FMX1 files (collaborative.fmx, visual.fmx, textual.fmx).
void save_condition_signals(const std::filesystem::path& dir, const ConditionSignals& s);
ConditionSignals load_condition_signals(const std::filesystem::path& dir);

}  // namespace ldmrec
