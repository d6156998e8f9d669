#pragma once

// Interaction data: loading, k-core filtering, splitting, synthetic
// generation and noise injection, plus item feature matrices.

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ldmrec/dense_matrix.hpp"

namespace ldmrec {

using Rng = std::mt19937_64;

// Sparse binary user x item matrix stored as sorted per-user item lists.
class InteractionMatrix {
 public:
  InteractionMatrix() = default;
  // Rows are sorted and deduplicated; throws DataError on an out-of-range item.
  InteractionMatrix(std::size_t num_users, std::size_t num_items, std::vector<std::vector<std::uint32_t>> rows);

  std::size_t num_users() const { return rows_.size(); }
  std::size_t num_items() const { return num_items_; }
  std::size_t nnz() const { return nnz_; }
  double density() const;

  std::span<const std::uint32_t> row(std::size_t u) const { return rows_.at(u); }
  const std::vector<std::vector<std::uint32_t>>& rows() const { return rows_; }
  bool contains(std::size_t u, std::uint32_t item) const;

  std::vector<std::size_t> item_degrees() const;
  std::size_t user_degree(std::size_t u) const { return rows_.at(u).size(); }

  // Row u as a dense 0/1 vector.
  std::vector<double> dense_row(std::size_t u) const;
  void dense_row_into(std::size_t u, std::span<double> out) const;

  // Original ids, index-aligned. Empty when the matrix was not loaded from ids.
  const std::vector<std::string>& user_ids() const { return user_ids_; }
  const std::vector<std::string>& item_ids() const { return item_ids_; }
  void set_ids(std::vector<std::string> user_ids, std::vector<std::string> item_ids);
  std::string user_id(std::size_t u) const;
  std::string item_id(std::size_t i) const;

  bool operator==(const InteractionMatrix&) const = default;

 private:
  std::size_t num_items_ = 0;
  std::size_t nnz_ = 0;
  std::vector<std::vector<std::uint32_t>> rows_;
  std::vector<std::string> user_ids_;
  std::vector<std::string> item_ids_;
};

// One content modality: one feature row per item.
struct FeatureMatrix {
  DenseMatrix values;
  std::size_t num_items() const { return values.rows(); }
  std::size_t dim() const { return values.cols(); }
};

struct DatasetSplit {
  InteractionMatrix train;
  InteractionMatrix validation;
  InteractionMatrix test;
};

struct SplitRatios {
  double train = 0.8;
  double validation = 0.1;
  double test = 0.1;
};

// ------------------------------------------------------------------ I/O

// "user<TAB>item" lines; '#' comments and blank lines skipped. Ids are
// arbitrary strings, indexed in ascending id order (numeric order when every
// id is an integer). Duplicate pairs collapse.
InteractionMatrix parse_interactions(std::istream& in);
InteractionMatrix load_interactions(const std::filesystem::path& path);
void save_interactions(const std::filesystem::path& path, const InteractionMatrix& r);

// Index-space TSV ("user_index<TAB>item_index") for a known index space.
InteractionMatrix load_indexed_interactions(const std::filesystem::path& path, std::size_t num_users,
                                            std::size_t num_items);
void save_indexed_interactions(const std::filesystem::path& path, const InteractionMatrix& r);

// Headerless CSV or FMX1 binary ("FMX1", u32 rows, u32 cols, little-endian
// f32 payload); the format is detected from the first four bytes.
FeatureMatrix load_features(const std::filesystem::path& path);
void save_features_csv(const std::filesystem::path& path, const FeatureMatrix& f);
void save_features_fmx1(const std::filesystem::path& path, const FeatureMatrix& f);

// Split directory: train.tsv, valid.tsv, test.tsv (index space), users.tsv and
// items.tsv id maps when ids exist, and manifest.json {seed, ratios, counts}.
void save_split(const std::filesystem::path& dir, const DatasetSplit& split, std::uint64_t seed,
                const SplitRatios& ratios);
DatasetSplit load_split(const std::filesystem::path& dir);

// ------------------------------------------------------------ transforms

// Iteratively drops users and items with fewer than k interactions. The
// result is re-indexed densely and keeps the surviving ids.
InteractionMatrix k_core_filter(const InteractionMatrix& r, std::size_t k);

// Per-user random partition. Users with fewer than 3 interactions keep
// everything in train.
DatasetSplit split(const InteractionMatrix& r, const SplitRatios& ratios, std::uint64_t seed);

// Adds ceil(fraction * degree) random unobserved items to every user row.
InteractionMatrix inject_noise(const InteractionMatrix& r, double fraction, std::uint64_t seed);

// Rows of `features` for the given original row indices.
FeatureMatrix select_rows(const FeatureMatrix& features, std::span<const std::size_t> rows);

// ------------------------------------------------------------- synthetic

struct SyntheticSpec {
  std::size_t num_users = 200;
  std::size_t num_items = 100;
  std::size_t num_clusters = 4;
  double noise_rate = 0.1;
  std::size_t feature_dim = 16;
  std::uint64_t seed = 0;
  std::size_t min_degree = 8;
  std::size_t max_degree = 16;
  // Spread of item features around their cluster centroid.
  double feature_jitter = 0.5;
  // Zero: non-noise picks are uniform over the user's cluster. Positive: soft
  // clusters, where picks range over all items weighted by
  // exp(taste_strength * <taste_u, [visual_i; textual_i]> / sqrt(2 dim)),
  // taste_u = cluster_weight * (cluster feature mean) + N(0, I).
  double taste_strength = 0.0;
  double cluster_weight = 1.0;
};

struct SyntheticDataset {
  InteractionMatrix interactions;
  FeatureMatrix visual;
  FeatureMatrix textual;
  std::vector<std::size_t> user_cluster;
  std::vector<std::size_t> item_cluster;
};

SyntheticDataset synthesize(const SyntheticSpec& spec);

}  // namespace ldmrec
