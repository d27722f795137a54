#pragma once

#include <cstdint>

#include "difaug/params.hpp"

namespace difaug {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

/// First and second moment estimates with the same layout as the params.
template <typename T>
struct AdamState {
  ParamSet<T> m;
  ParamSet<T> v;
  std::int64_t step = 0;
};

template <typename T>
AdamState<T> make_adam_state(const ParamSet<T>& params);

/// One bias-corrected Adam update from the gradients currently held by the
/// params (a tensor without a gradient counts as zero gradient). Gradients
/// are left in place; callers zero them before the next accumulation.
template <typename T>
void adam_step(ParamSet<T>& params, AdamState<T>& state, const AdamConfig& cfg);

}  // namespace difaug
