#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "ldmrec/dense_matrix.hpp"
#include "ldmrec/tape.hpp"

namespace ldmrec::testing {

inline DenseMatrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -1.0,
                                 double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  DenseMatrix m(r, c);
  for (auto& x : m.values()) x = u(rng);
  return m;
}

inline double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Relative error with an absolute floor so exact zeros compare cleanly.
inline double rel_err(double analytic, double numeric, double floor = 1e-9) {
  const double diff = std::abs(analytic - numeric);
  if (diff <= floor) return 0.0;
  return diff / std::max(std::abs(analytic), std::abs(numeric));
}

struct GradCheck {
  double max_rel = 0.0;
  double max_abs = 0.0;
  std::size_t worst_param = 0;
  std::size_t checked = 0;
};

// Central finite differences against Tape::backward for every entry of the
// selected parameters. loss_fn records a scalar on the given tape.
inline GradCheck check_gradients(ParamSet& params, const std::function<Var(Tape&)>& loss_fn,
                                 double h = 1e-5, std::size_t max_entries_per_param = 0) {
  Gradients analytic;
  {
    Tape tape(&params);
    analytic = tape.backward(loss_fn(tape));
  }
  auto eval = [&] {
    Tape tape(&params);
    return loss_fn(tape).value()[0];
  };
  GradCheck out;
  for (std::size_t p = 0; p < params.size(); ++p) {
    DenseMatrix& w = params.value(p);
    const std::size_t n = max_entries_per_param == 0 ? w.size() : std::min(w.size(), max_entries_per_param);
    const std::size_t stride = max_entries_per_param == 0 ? 1 : std::max<std::size_t>(1, w.size() / n);
    for (std::size_t k = 0, i = 0; k < n && i < w.size(); ++k, i += stride) {
      const double orig = w[i];
      w[i] = orig + h;
      const double fp = eval();
      w[i] = orig - h;
      const double fm = eval();
      w[i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double e = rel_err(analytic[p][i], numeric);
      out.max_abs = std::max(out.max_abs, std::abs(analytic[p][i] - numeric));
      if (e > out.max_rel) {
        out.max_rel = e;
        out.worst_param = p;
      }
      ++out.checked;
    }
  }
  return out;
}

}  // namespace ldmrec::testing
