#include "ldmrec/conditioning.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ldmrec/errors.hpp"
#include "ldmrec/kernels.hpp"

namespace ldmrec {

namespace {

double column_dot(const DenseMatrix& a, std::size_t p, const DenseMatrix& b, std::size_t q) {
  double s = 0.0;
  for (std::size_t r = 0; r < a.rows(); ++r) s += a(r, p) * b(r, q);
  return s;
}

// Sparse binary R * X (users x k) and R^T * X (items x k).
DenseMatrix sparse_times(const InteractionMatrix& r, const DenseMatrix& x) {
  DenseMatrix out(r.num_users(), x.cols());
  const auto n = static_cast<std::ptrdiff_t>(r.num_users());
#pragma omp parallel for schedule(static) num_threads(kernels::num_workers())
  for (std::ptrdiff_t uu = 0; uu < n; ++uu) {
    const auto u = static_cast<std::size_t>(uu);
    auto dst = out.row(u);
    for (auto i : r.row(u)) {
      auto src = x.row(i);
      for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
    }
  }
  return out;
}

DenseMatrix sparse_t_times(const InteractionMatrix& r, const DenseMatrix& x) {
  DenseMatrix out(r.num_items(), x.cols());
  for (std::size_t u = 0; u < r.num_users(); ++u) {
    auto src = x.row(u);
    for (auto i : r.row(u)) {
      auto dst = out.row(i);
      for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
    }
  }
  return out;
}

struct SparseOperator {
  const InteractionMatrix& r;
  std::size_t rows() const { return r.num_users(); }
  std::size_t cols() const { return r.num_items(); }
  DenseMatrix times(const DenseMatrix& x) const { return sparse_times(r, x); }
  DenseMatrix t_times(const DenseMatrix& x) const { return sparse_t_times(r, x); }
};

struct DenseOperator {
  const DenseMatrix& a;
  std::size_t rows() const { return a.rows(); }
  std::size_t cols() const { return a.cols(); }
  DenseMatrix times(const DenseMatrix& x) const { return kernels::matmul(a, x); }
  DenseMatrix t_times(const DenseMatrix& x) const { return kernels::matmul_at(a, x); }
};

template <typename Op>
SvdResult randomized_svd_impl(const Op& op, const RandomizedSvdOptions& opts) {
  const std::size_t m = op.rows(), n = op.cols();
  if (opts.rank == 0 || opts.rank > std::min(m, n)) {
    throw ConfigError("randomized_svd: rank must be in 1..min(rows, cols)");
  }
  const std::size_t width = std::min(opts.rank + opts.oversample, std::min(m, n));

  Rng rng(opts.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  DenseMatrix omega(n, width);
  for (auto& x : omega.values()) x = normal(rng);

  DenseMatrix q = op.times(omega);
  orthonormalize_columns(q);
  for (std::size_t it = 0; it < opts.power_iters; ++it) {
    DenseMatrix z = op.t_times(q);
    orthonormalize_columns(z);
    q = op.times(z);
    orthonormalize_columns(q);
  }

  // B^T = A^T Q (n x width); B^T J = W gives B = J Sigma V^T.
  SvdResult small = jacobi_svd(op.t_times(q));
  SvdResult out;
  DenseMatrix left = kernels::matmul(q, small.items);  // m x width
  out.users = DenseMatrix(m, opts.rank);
  out.items = DenseMatrix(n, opts.rank);
  out.singular_values.assign(small.singular_values.begin(), small.singular_values.begin() + static_cast<std::ptrdiff_t>(opts.rank));
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < opts.rank; ++c) out.users(r, c) = left(r, c);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < opts.rank; ++c) out.items(r, c) = small.users(r, c);
  return out;
}

}  // namespace

void orthonormalize_columns(DenseMatrix& a) {
  const std::size_t m = a.rows(), k = a.cols();
  if (k > m) throw DimensionError("orthonormalize_columns: more columns than rows");
  std::size_t next_basis = 0;
  for (std::size_t j = 0; j < k; ++j) {
    double original = std::sqrt(column_dot(a, j, a, j));
    for (int attempt = 0;; ++attempt) {
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t p = 0; p < j; ++p) {
          const double proj = column_dot(a, p, a, j);
          for (std::size_t r = 0; r < m; ++r) a(r, j) -= proj * a(r, p);
        }
      }
      const double norm = std::sqrt(column_dot(a, j, a, j));
      if (norm > 1e-10 * std::max(original, 1e-300) && norm > 1e-300) {
        for (std::size_t r = 0; r < m; ++r) a(r, j) /= norm;
        break;
      }
      // Column lies in the span of the previous ones: try the next unit vector.
      if (next_basis >= m || attempt > static_cast<int>(m)) throw NumericError("orthonormalize_columns: cannot complete basis");
      for (std::size_t r = 0; r < m; ++r) a(r, j) = r == next_basis ? 1.0 : 0.0;
      ++next_basis;
      original = 1.0;
    }
  }
}

SvdResult jacobi_svd(const DenseMatrix& input) {
  const std::size_t m = input.rows(), n = input.cols();
  if (m < n) throw DimensionError("jacobi_svd: expects rows >= cols");
  DenseMatrix w = input;
  DenseMatrix v = DenseMatrix::identity(n);
  constexpr double kTol = 1e-15;
  for (int sweep = 0; sweep < 100; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double alpha = column_dot(w, p, w, p);
        const double beta = column_dot(w, q, w, q);
        const double gamma = column_dot(w, p, w, q);
        if (std::abs(gamma) <= kTol * std::sqrt(alpha * beta) || gamma == 0.0) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t r = 0; r < m; ++r) {
          const double wp = w(r, p), wq = w(r, q);
          w(r, p) = c * wp - s * wq;
          w(r, q) = s * wp + c * wq;
        }
        for (std::size_t r = 0; r < n; ++r) {
          const double vp = v(r, p), vq = v(r, q);
          v(r, p) = c * vp - s * vq;
          v(r, q) = s * vp + c * vq;
        }
      }
    }
    if (!rotated) break;
  }

  std::vector<double> sigma(n);
  for (std::size_t j = 0; j < n; ++j) sigma[j] = std::sqrt(column_dot(w, j, w, j));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sigma[a] > sigma[b]; });

  SvdResult out;
  out.users = DenseMatrix(m, n);
  out.items = DenseMatrix(n, n);
  out.singular_values.resize(n);
  const double cutoff = (sigma.empty() ? 0.0 : sigma[order[0]]) * 1e-12;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = order[k];
    out.singular_values[k] = sigma[j];
    for (std::size_t r = 0; r < n; ++r) out.items(r, k) = v(r, j);
    // Null directions get zeros here and are completed below.
    if (sigma[j] > cutoff && sigma[j] > 0.0) {
      for (std::size_t r = 0; r < m; ++r) out.users(r, k) = w(r, j) / sigma[j];
    } else {
      out.singular_values[k] = sigma[j] > cutoff ? sigma[j] : 0.0;
    }
  }
  orthonormalize_columns(out.users);
  return out;
}

SvdResult randomized_svd(const InteractionMatrix& r, const RandomizedSvdOptions& opts) {
  return randomized_svd_impl(SparseOperator{r}, opts);
}

SvdResult randomized_svd(const DenseMatrix& a, const RandomizedSvdOptions& opts) {
  return randomized_svd_impl(DenseOperator{a}, opts);
}

namespace {

std::vector<double> inv_sqrt_degrees(const std::vector<std::size_t>& deg) {
  std::vector<double> out(deg.size());
  for (std::size_t i = 0; i < deg.size(); ++i) out[i] = deg[i] == 0 ? 0.0 : 1.0 / std::sqrt(static_cast<double>(deg[i]));
  return out;
}

// D_U^-1/2 R D_I^-1/2 X, one output row per user.
DenseMatrix normalized_propagate(const InteractionMatrix& r, const std::vector<double>& item_norm, const DenseMatrix& x) {
  if (x.rows() != r.num_items()) throw DimensionError("propagate: operand rows must equal num_items");
  DenseMatrix out(r.num_users(), x.cols());
  const auto n = static_cast<std::ptrdiff_t>(r.num_users());
#pragma omp parallel for schedule(static) num_threads(kernels::num_workers())
  for (std::ptrdiff_t uu = 0; uu < n; ++uu) {
    const auto u = static_cast<std::size_t>(uu);
    const auto row = r.row(u);
    if (row.empty()) continue;
    const double du = 1.0 / std::sqrt(static_cast<double>(row.size()));
    auto dst = out.row(u);
    for (auto i : row) {
      const double w = du * item_norm[i];
      auto src = x.row(i);
      for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += w * src[c];
    }
  }
  return out;
}

// (D_U^-1/2 R D_I^-1/2)^T Y, one output row per item.
DenseMatrix normalized_propagate_t(const InteractionMatrix& r, const std::vector<double>& item_norm,
                                   const DenseMatrix& y) {
  DenseMatrix out(r.num_items(), y.cols());
  for (std::size_t u = 0; u < r.num_users(); ++u) {
    const auto row = r.row(u);
    if (row.empty()) continue;
    const double du = 1.0 / std::sqrt(static_cast<double>(row.size()));
    auto src = y.row(u);
    for (auto i : row) {
      const double w = du * item_norm[i];
      auto dst = out.row(i);
      for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += w * src[c];
    }
  }
  return out;
}

}  // namespace

DenseMatrix collaborative_encode(const InteractionMatrix& r, const DenseMatrix& user_vectors,
                                 const DenseMatrix& item_vectors) {
  if (user_vectors.rows() != r.num_users() || item_vectors.rows() != r.num_items() ||
      user_vectors.cols() != item_vectors.cols()) {
    throw DimensionError("collaborative_encode: eigenvector shapes do not match the interaction matrix");
  }
  const std::size_t k = user_vectors.cols();
  DenseMatrix propagated = normalized_propagate(r, inv_sqrt_degrees(r.item_degrees()), item_vectors);
  DenseMatrix c(r.num_users(), 2 * k);
  for (std::size_t u = 0; u < r.num_users(); ++u) {
    auto dst = c.row(u);
    auto a = user_vectors.row(u);
    auto b = propagated.row(u);
    std::copy(a.begin(), a.end(), dst.begin());
    std::copy(b.begin(), b.end(), dst.begin() + static_cast<std::ptrdiff_t>(k));
  }
  return c;
}

DenseMatrix modality_encode(const InteractionMatrix& r, const FeatureMatrix& features, std::size_t hops) {
  if (features.num_items() != r.num_items()) {
    throw DimensionError("modality_encode: feature rows must equal num_items");
  }
  if (hops == 0) throw ConfigError("modality_encode: hops must be >= 1");
  const auto item_norm = inv_sqrt_degrees(r.item_degrees());
  DenseMatrix user = normalized_propagate(r, item_norm, features.values);
  for (std::size_t h = 1; h < hops; ++h) {
    DenseMatrix item = normalized_propagate_t(r, item_norm, user);
    user = normalized_propagate(r, item_norm, item);
  }
  return user;
}

ConditionSignals build_condition_signals(const InteractionMatrix& train, const FeatureMatrix& visual,
                                         const FeatureMatrix& textual, const ConditioningOptions& opts) {
  SvdResult svd = randomized_svd(train, opts.svd);
  ConditionSignals s;
  s.collaborative = collaborative_encode(train, svd.users, svd.items);
  s.visual = modality_encode(train, visual, opts.modality_hops);
  s.textual = modality_encode(train, textual, opts.modality_hops);
  return s;
}

void save_condition_signals(const std::filesystem::path& dir, const ConditionSignals& s) {
  save_features_fmx1(dir / "collaborative.fmx", {s.collaborative});
  save_features_fmx1(dir / "visual.fmx", {s.visual});
  save_features_fmx1(dir / "textual.fmx", {s.textual});
}

ConditionSignals load_condition_signals(const std::filesystem::path& dir) {
  ConditionSignals s;
  s.collaborative = load_features(dir / "collaborative.fmx").values;
  s.visual = load_features(dir / "visual.fmx").values;
  s.textual = load_features(dir / "textual.fmx").values;
  if (s.collaborative.rows() != s.visual.rows() || s.visual.rows() != s.textual.rows()) {
    throw DataError("condition cache: user counts disagree across files");
  }
  return s;
}

}  // namespace ldmrec
