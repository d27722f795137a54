#pragma once

#include <cstddef>
#include <functional>
#include <span>

#include "difaug/tape.hpp"
#include "difaug/tensor.hpp"

namespace difaug {

// Builds a scalar on the given tape from the parameter leaves (one Var per
// tensor, in the order passed to grad_check).
using ScalarFn = std::function<Var(Tape<double>&, std::span<const Var>)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares reverse-mode gradients with central finite differences.
///
/// Each coordinate is differenced at fd_step and fd_step / 2. When the two
/// slopes disagree the stencil straddles a kink (leaky relu, |x|), and the
/// step shrinks tenfold, up to three times. The error of one coordinate is
///   max(0, |analytic - fd| - noise) / max(1e-8, |analytic| + |fd|)
/// where noise bounds the rounding error of the difference quotient
/// (64 ulps of each evaluation over 2h). The maximum over all coordinates of
/// all tensors is reported. Existing gradients on the tensors are discarded.
/// Every evaluation runs with the tape's finiteness check on, so a NaN/Inf
/// throws NumericError naming the op.
GradCheckResult grad_check(const ScalarFn& f, std::span<Tensor<double>* const> params,
                           double fd_step = 1e-5);

}  // namespace difaug
