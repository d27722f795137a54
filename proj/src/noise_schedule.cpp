#include "difaug/noise_schedule.hpp"

#include <cmath>
#include <string>

#include "difaug/error.hpp"

namespace difaug {

void NoiseSchedule::validate() const {
  if (!(beta_min > 0.0) || !(beta_min < beta_max) || !std::isfinite(beta_max)) {
    throw ConfigError("noise schedule requires 0 < beta_min < beta_max, got beta_min=" +
                      std::to_string(beta_min) + " beta_max=" + std::to_string(beta_max));
  }
  if (total_steps <= 0) {
    throw ConfigError("noise schedule total_steps must be positive, got " +
                      std::to_string(total_steps));
  }
}

double NoiseSchedule::alpha(int step) const {
  if (step < 0 || step > total_steps) {
    throw ConfigError("diffusion step " + std::to_string(step) + " outside [0, " +
                      std::to_string(total_steps) + "]");
  }
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  return std::exp(-0.25 * t * t * (beta_max - beta_min) - 0.5 * t * beta_min);
}

int sample_step(const NoiseSchedule& schedule, const TSamplingPolicy& policy, Rng& rng) {
  if (policy.max_step < 0 || policy.max_step > schedule.total_steps) {
    throw ConfigError("max_step " + std::to_string(policy.max_step) + " outside [0, " +
                      std::to_string(schedule.total_steps) + "]");
  }
  return static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(policy.max_step)));
}

}  // namespace difaug
