#pragma once

#include "difaug/rng.hpp"

namespace difaug {

/// Linear variance-preserving schedule
///   alpha(t) = exp(-t^2 (beta_max - beta_min) / 4 - t beta_min / 2),
/// evaluated on the discrete grid t = step / total_steps.
struct NoiseSchedule {
  double beta_min = 0.1;
  double beta_max = 20.0;
  int total_steps = 1000;

  // Throws ConfigError unless 0 < beta_min < beta_max and total_steps > 0.
  void validate() const;

  // step in [0, total_steps]; alpha(0) == 1 exactly.
  double alpha(int step) const;
};

// Training-time step distribution: uniform on {0, ..., max_step}.
struct TSamplingPolicy {
  int max_step = 1000;
};

int sample_step(const NoiseSchedule& schedule, const TSamplingPolicy& policy, Rng& rng);

}  // namespace difaug
