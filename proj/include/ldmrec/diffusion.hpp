#pragma once

// Forward corruption: linear schedule on 1 - alpha_bar, closed-form sampling
// of x_t from x_in, and sinusoidal step embeddings.

#include <cstddef>
#include <span>
#include <vector>

#include "ldmrec/data.hpp"

namespace ldmrec {

class NoiseSchedule {
 public:
  // 1 - alpha_bar_t = s * (alpha_min + (t - 1) / (T - 1) * (1 - alpha_min)), t = 1..T.
  // For T = 1 the single step sits at s * alpha_min.
  static NoiseSchedule build(std::size_t steps, double scale = 0.1, double alpha_min = 0.0001);

  std::size_t steps() const { return one_minus_.size(); }
  double scale() const { return scale_; }
  double alpha_min() const { return alpha_min_; }

  double alpha_bar(std::size_t t) const { return 1.0 - one_minus_alpha_bar(t); }
  double one_minus_alpha_bar(std::size_t t) const;

 private:
  double scale_ = 0.1;
  double alpha_min_ = 0.0001;
  std::vector<double> one_minus_;  // index t - 1
};

// x_t = sqrt(alpha_bar_t) x_in + sqrt(1 - alpha_bar_t) eps, eps ~ N(0, I).
void q_sample(std::span<const double> x_in, std::size_t t, const NoiseSchedule& schedule, Rng& rng,
              std::span<double> x_t);
std::vector<double> q_sample(std::span<const double> x_in, std::size_t t, const NoiseSchedule& schedule, Rng& rng);

// Same draw with explicit coefficients, for callers that need a schedule-free
// corruption (e.g. the zero-noise limit).
void q_sample_with(std::span<const double> x_in, double alpha_bar, Rng& rng, std::span<double> x_t);

// e(2j) = sin(t / 10000^(2j/d)), e(2j+1) = cos(t / 10000^(2j/d)). t = 0 is valid.
std::vector<double> step_embedding(std::size_t t, std::size_t dim);
void step_embedding_into(std::size_t t, std::span<double> out);

}  // namespace ldmrec
