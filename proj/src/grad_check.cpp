#include "difaug/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace difaug {
namespace {

constexpr int kKinkRetries = 3;
constexpr double kSmoothRtol = 1e-5;

double evaluate(const ScalarFn& f, std::span<Tensor<double>* const> params) {
  Tape<double> tape;
  tape.set_check_finite(true);
  std::vector<Var> vars;
  for (Tensor<double>* p : params) vars.push_back(tape.param(*p));
  return tape.value(f(tape, vars)).item();
}

struct Central {
  double slope = 0.0;
  // Bound on the rounding error of slope from the two evaluations.
  double noise = 0.0;
};

Central central(const ScalarFn& f, std::span<Tensor<double>* const> params, Tensor<double>& p,
                std::size_t i, double h) {
  const double orig = p[i];
  p[i] = orig + h;
  const double up = evaluate(f, params);
  p[i] = orig - h;
  const double down = evaluate(f, params);
  p[i] = orig;
  constexpr double kEvalUlps = 64.0;
  const double eps = std::numeric_limits<double>::epsilon();
  return {(up - down) / (2.0 * h), kEvalUlps * eps * (std::abs(up) + std::abs(down)) / (2.0 * h)};
}

}  // namespace

GradCheckResult grad_check(const ScalarFn& f, std::span<Tensor<double>* const> params,
                           double fd_step) {
  std::vector<bool> saved_flags;
  for (Tensor<double>* p : params) {
    saved_flags.push_back(p->requires_grad());
    p->set_requires_grad(true);
    p->clear_grad();
  }

  {
    Tape<double> tape;
    tape.set_check_finite(true);
    std::vector<Var> vars;
    for (Tensor<double>* p : params) vars.push_back(tape.param(*p));
    tape.backward(f(tape, vars));
  }

  GradCheckResult result;
  for (std::size_t t = 0; t < params.size(); ++t) {
    Tensor<double>& p = *params[t];
    const std::vector<double> analytic =
        p.has_grad() ? std::vector<double>(p.grad().begin(), p.grad().end())
                     : std::vector<double>(p.numel(), 0.0);
    for (std::size_t i = 0; i < p.numel(); ++i) {
      // A stencil that straddles a kink gives different slopes at h and h/2;
      // shrink it until both agree or the retries run out.
      double h = fd_step;
      Central wide = central(f, params, p, i, h);
      Central narrow = central(f, params, p, i, h / 2);
      for (int retry = 0; retry < kKinkRetries; ++retry) {
        const double gap = std::abs(wide.slope - narrow.slope);
        if (gap <= kSmoothRtol * (std::abs(wide.slope) + std::abs(narrow.slope)) + wide.noise +
                       narrow.noise) {
          break;
        }
        h /= 10.0;
        wide = central(f, params, p, i, h);
        narrow = central(f, params, p, i, h / 2);
      }
      const double numeric = narrow.slope;
      const double excess = std::max(0.0, std::abs(analytic[i] - numeric) - narrow.noise);
      const double err = excess / std::max(1e-8, std::abs(analytic[i]) + std::abs(numeric));
      if (err > result.max_rel_error) {
        result = {err, t, i, analytic[i], numeric};
      }
    }
  }

  for (std::size_t t = 0; t < params.size(); ++t) {
    params[t]->set_requires_grad(saved_flags[t]);
  }
  return result;
}

}  // namespace difaug
