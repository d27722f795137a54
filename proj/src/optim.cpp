#include "difaug/optim.hpp"

#include <cmath>
#include <string>

#include "difaug/error.hpp"

namespace difaug {

void AdamConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("Adam lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("Adam beta1 must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam beta2 must be in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("Adam eps must be positive");
}

template <typename T>
AdamState<T> make_adam_state(const ParamSet<T>& params) {
  AdamState<T> s;
  for (std::size_t i = 0; i < params.size(); ++i) {
    s.m.add(params.name(i), Tensor<T>(params[i].shape()));
    s.v.add(params.name(i), Tensor<T>(params[i].shape()));
  }
  return s;
}

template <typename T>
void adam_step(ParamSet<T>& params, AdamState<T>& state, const AdamConfig& cfg) {
  if (!state.m.same_layout(params) || !state.v.same_layout(params)) {
    throw ConfigError("Adam state does not match the parameter registry");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = params[i];
    if (!p.has_grad()) continue;
    auto g = p.grad();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t k = 0; k < p.numel(); ++k) {
      const double gk = g[k];
      const double mk = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
      const double vk = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double update = cfg.lr * (mk / c1) / (std::sqrt(vk / c2) + cfg.eps);
      p[k] = static_cast<T>(p[k] - update);
    }
  }
}

template AdamState<float> make_adam_state<float>(const ParamSet<float>&);
template AdamState<double> make_adam_state<double>(const ParamSet<double>&);
template void adam_step<float>(ParamSet<float>&, AdamState<float>&, const AdamConfig&);
template void adam_step<double>(ParamSet<double>&, AdamState<double>&, const AdamConfig&);

}  // namespace difaug
