#include "ldmrec/diffusion.hpp"

#include <cmath>
#include <string>

#include "ldmrec/errors.hpp"

namespace ldmrec {

NoiseSchedule NoiseSchedule::build(std::size_t steps, double scale, double alpha_min) {
  if (steps < 1) throw ConfigError("noise schedule: T must be >= 1");
  if (!(scale > 0.0 && scale <= 1.0)) throw ConfigError("noise schedule: s must be in (0, 1]");
  if (!(alpha_min > 0.0 && alpha_min < 1.0)) throw ConfigError("noise schedule: alpha_min must be in (0, 1)");
  NoiseSchedule s;
  s.scale_ = scale;
  s.alpha_min_ = alpha_min;
  s.one_minus_.resize(steps);
  for (std::size_t t = 1; t <= steps; ++t) {
    const double ramp = steps == 1 ? 0.0 : static_cast<double>(t - 1) / static_cast<double>(steps - 1);
    s.one_minus_[t - 1] = scale * (alpha_min + ramp * (1.0 - alpha_min));
  }
  return s;
}

double NoiseSchedule::one_minus_alpha_bar(std::size_t t) const {
  if (t < 1 || t > one_minus_.size()) {
    throw IndexError("noise schedule: step " + std::to_string(t) + " outside 1.." + std::to_string(one_minus_.size()));
  }
  return one_minus_[t - 1];
}

void q_sample_with(std::span<const double> x_in, double alpha_bar, Rng& rng, std::span<double> x_t) {
  if (x_t.size() != x_in.size()) throw DimensionError("q_sample: output size mismatch");
  const double signal = std::sqrt(alpha_bar);
  const double noise = std::sqrt(1.0 - alpha_bar);
  std::normal_distribution<double> eps(0.0, 1.0);
  for (std::size_t i = 0; i < x_in.size(); ++i) x_t[i] = signal * x_in[i] + noise * eps(rng);
}

void q_sample(std::span<const double> x_in, std::size_t t, const NoiseSchedule& schedule, Rng& rng,
              std::span<double> x_t) {
  q_sample_with(x_in, schedule.alpha_bar(t), rng, x_t);
}

std::vector<double> q_sample(std::span<const double> x_in, std::size_t t, const NoiseSchedule& schedule, Rng& rng) {
  std::vector<double> out(x_in.size());
  q_sample(x_in, t, schedule, rng, out);
  return out;
}

void step_embedding_into(std::size_t t, std::span<double> out) {
  const std::size_t dim = out.size();
  if (dim == 0 || dim % 2 != 0) throw ConfigError("step embedding: dimension must be even and positive");
  const double tt = static_cast<double>(t);
  for (std::size_t j = 0; j < dim / 2; ++j) {
    const double freq = std::pow(10000.0, static_cast<double>(2 * j) / static_cast<double>(dim));
    out[2 * j] = std::sin(tt / freq);
    out[2 * j + 1] = std::cos(tt / freq);
  }
}

std::vector<double> step_embedding(std::size_t t, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0) throw ConfigError("step embedding: dimension must be even and positive");
  std::vector<double> out(dim);
  step_embedding_into(t, out);
  return out;
}

}  // namespace ldmrec
