#include "difaug/sr_models.hpp"

#include <cmath>
#include <string>

#include "difaug/error.hpp"
#include "difaug/ops.hpp"
#include "difaug/resample.hpp"
#include "difaug/rng.hpp"

namespace difaug {
namespace {

template <typename T>
void add_conv(ParamSet<T>& p, const std::string& name, std::size_t co, std::size_t ci) {
  p.add(name + ".weight", Tensor<T>({co, ci, 3, 3}));
  p.add(name + ".bias", Tensor<T>({co}));
}

bool is_conv_kernel(const Shape& s) { return s.size() == 4; }

template <typename T>
void kaiming_fill(ParamSet<T>& p, std::uint64_t seed) {
  for (std::size_t i = 0; i < p.size(); ++i) {
    Tensor<T>& t = p[i];
    if (!is_conv_kernel(t.shape())) continue;
    const double std = std::sqrt(2.0 / static_cast<double>(t.dim(1) * t.dim(2) * t.dim(3)));
    Rng rng(derive_seed(seed, i));
    for (auto& v : t.data()) v = static_cast<T>(std * rng.normal());
  }
}

template <typename T>
void check_layout(const ParamSet<T>& expected, const ParamSet<T>& got, const char* what) {
  if (got.size() != expected.size()) {
    throw ConfigError(std::string(what) + " params: expected " + std::to_string(expected.size()) +
                      " tensors, got " + std::to_string(got.size()));
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (got.name(i) != expected.name(i) || got[i].shape() != expected[i].shape()) {
      throw ConfigError(std::string(what) + " params: entry " + std::to_string(i) + " is '" +
                        got.name(i) + "' " + shape_str(got[i].shape()) + ", expected '" +
                        expected.name(i) + "' " + shape_str(expected[i].shape()));
    }
  }
}

// Consumes a weight/bias pair from the parameter list.
struct Cursor {
  std::span<const Var> params;
  std::size_t next = 0;

  std::pair<Var, Var> conv() {
    if (next + 2 > params.size()) throw ConfigError("model params: too few tensors bound");
    const Var w = params[next], b = params[next + 1];
    next += 2;
    return {w, b};
  }
};

template <typename T>
Var conv(Tape<T>& tape, Cursor& cur, Var x, std::size_t stride = 1) {
  const auto [w, b] = cur.conv();
  return ops::bias_add(tape, ops::conv2d(tape, x, w, stride, 1), b);
}

}  // namespace

void GeneratorSpec::validate() const {
  if (base_channels == 0) throw ConfigError("generator base_channels must be positive");
  if (num_blocks == 0) throw ConfigError("generator num_blocks must be positive");
  if (scale != 4) throw ConfigError("generator scale is fixed at 4, got " + std::to_string(scale));
}

void DiscriminatorSpec::validate() const {
  if (base_channels == 0) throw ConfigError("discriminator base_channels must be positive");
  if (num_downsamples == 0 || num_downsamples > 8) {
    throw ConfigError("discriminator num_downsamples must be in [1, 8]");
  }
}

std::size_t DiscriminatorSpec::feature_channels() const {
  return base_channels << (num_downsamples - 1);
}

nlohmann::json to_json(const GeneratorSpec& s) {
  return {{"base_channels", s.base_channels}, {"num_blocks", s.num_blocks}};
}
nlohmann::json to_json(const DiscriminatorSpec& s) {
  return {{"base_channels", s.base_channels}, {"num_downsamples", s.num_downsamples}};
}
GeneratorSpec generator_spec_from_json(const nlohmann::json& j) {
  GeneratorSpec s;
  s.base_channels = j.at("base_channels").get<std::size_t>();
  s.num_blocks = j.at("num_blocks").get<std::size_t>();
  s.validate();
  return s;
}
DiscriminatorSpec discriminator_spec_from_json(const nlohmann::json& j) {
  DiscriminatorSpec s;
  s.base_channels = j.at("base_channels").get<std::size_t>();
  s.num_downsamples = j.at("num_downsamples").get<std::size_t>();
  s.validate();
  return s;
}

template <typename T>
ParamSet<T> generator_registry(const GeneratorSpec& spec) {
  spec.validate();
  const std::size_t c = spec.base_channels;
  ParamSet<T> p;
  add_conv(p, "conv_first", c, 3);
  for (std::size_t i = 0; i < spec.num_blocks; ++i) {
    add_conv(p, "blocks." + std::to_string(i) + ".conv1", c, c);
    add_conv(p, "blocks." + std::to_string(i) + ".conv2", c, c);
  }
  add_conv(p, "conv_body", c, c);
  add_conv(p, "up1", c, c);
  add_conv(p, "up2", c, c);
  add_conv(p, "conv_last", 3, c);
  return p;
}

template <typename T>
ParamSet<T> discriminator_registry(const DiscriminatorSpec& spec) {
  spec.validate();
  ParamSet<T> p;
  std::size_t in = 3;
  for (std::size_t i = 0; i < spec.num_downsamples; ++i) {
    const std::size_t out = spec.base_channels << i;
    add_conv(p, "down" + std::to_string(i), out, in);
    in = out;
  }
  p.add("head.weight", Tensor<T>({in, 1}));
  p.add("head.bias", Tensor<T>({1}));
  return p;
}

template <typename T>
ParamSet<T> init_generator(const GeneratorSpec& spec, std::uint64_t seed) {
  ParamSet<T> p = generator_registry<T>(spec);
  kaiming_fill(p, seed);
  return p;
}

template <typename T>
ParamSet<T> init_discriminator(const DiscriminatorSpec& spec, std::uint64_t seed) {
  ParamSet<T> p = discriminator_registry<T>(spec);
  kaiming_fill(p, seed);
  return p;
}

template <typename T>
void check_generator_params(const GeneratorSpec& spec, const ParamSet<T>& params) {
  check_layout(generator_registry<T>(spec), params, "generator");
}

template <typename T>
void check_discriminator_params(const DiscriminatorSpec& spec, const ParamSet<T>& params) {
  check_layout(discriminator_registry<T>(spec), params, "discriminator");
}

template <typename T>
Var generator_forward(Tape<T>& tape, const GeneratorSpec& spec, std::span<const Var> params,
                      Var lr, Var lr_upsampled) {
  const std::size_t expected = 2 * (2 * spec.num_blocks + 5);
  if (params.size() != expected) {
    throw ConfigError("generator: expected " + std::to_string(expected) + " bound tensors, got " +
                      std::to_string(params.size()));
  }
  const Tensor<T>& lv = tape.value(lr);
  const Tensor<T>& uv = tape.value(lr_upsampled);
  const std::size_t r = lv.rank();
  if ((r != 3 && r != 4) || lv.dim(r - 3) != 3 || uv.rank() != r ||
      uv.dim(r - 2) != lv.dim(r - 2) * spec.scale || uv.dim(r - 1) != lv.dim(r - 1) * spec.scale ||
      (r == 4 && uv.dim(0) != lv.dim(0))) {
    throw ShapeError("generator: LR " + shape_str(lv.shape()) + " and upsampled " +
                     shape_str(uv.shape()) + " do not form a x4 RGB pair");
  }

  Cursor cur{params};
  const Var fea = conv(tape, cur, lr);
  Var trunk = fea;
  for (std::size_t i = 0; i < spec.num_blocks; ++i) {
    Var h = ops::leaky_relu(tape, conv(tape, cur, trunk));
    h = conv(tape, cur, h);
    trunk = ops::add(tape, trunk, h);
  }
  Var x = ops::add(tape, fea, conv(tape, cur, trunk));
  x = ops::leaky_relu(tape, conv(tape, cur, ops::upsample_nearest2x(tape, x)));
  x = ops::leaky_relu(tape, conv(tape, cur, ops::upsample_nearest2x(tape, x)));
  x = conv(tape, cur, x);
  return ops::add(tape, x, lr_upsampled);
}

template <typename T>
Var discriminator_forward(Tape<T>& tape, const DiscriminatorSpec& spec,
                          std::span<const Var> params, Var x) {
  const std::size_t expected = 2 * spec.num_downsamples + 2;
  if (params.size() != expected) {
    throw ConfigError("discriminator: expected " + std::to_string(expected) +
                      " bound tensors, got " + std::to_string(params.size()));
  }
  const Tensor<T>& xv = tape.value(x);
  const std::size_t r = xv.rank();
  const std::size_t factor = std::size_t{1} << spec.num_downsamples;
  if ((r != 3 && r != 4) || xv.dim(r - 3) != 3) {
    throw ShapeError("discriminator: expected [3,H,W] or [N,3,H,W], got " + shape_str(xv.shape()));
  }
  if (xv.dim(r - 2) % factor != 0 || xv.dim(r - 1) % factor != 0) {
    throw ShapeError("discriminator: input " + shape_str(xv.shape()) +
                     " is not divisible by 2^num_downsamples = " + std::to_string(factor));
  }
  Cursor cur{params};
  Var h = x;
  for (std::size_t i = 0; i < spec.num_downsamples; ++i) h = ops::leaky_relu(tape, conv(tape, cur, h, 2));
  const Var pooled = ops::global_avg_pool(tape, h);
  const Var w = params[cur.next], b = params[cur.next + 1];
  const Var logits = ops::bias_add(tape, ops::matmul(tape, pooled, w), b);
  const std::size_t n = tape.value(logits).dim(0);
  return ops::reshape(tape, logits, Shape{n});
}

template <typename T>
Tensor<T> generate(const GeneratorSpec& spec, const ParamSet<T>& params, const Tensor<T>& lr) {
  check_generator_params(spec, params);
  Tape<T> tape;
  const auto vars = params.bind_frozen(tape);
  const Var l = tape.constant(lr);
  const Var u = tape.constant(bicubic_upsample(lr, spec.scale));
  return tape.value(generator_forward(tape, spec, vars, l, u));
}

template <typename T>
Tensor<T> discriminate(const DiscriminatorSpec& spec, const ParamSet<T>& params,
                       const Tensor<T>& x) {
  check_discriminator_params(spec, params);
  Tape<T> tape;
  const auto vars = params.bind_frozen(tape);
  return tape.value(discriminator_forward(tape, spec, vars, tape.constant(x)));
}

#define DIFAUG_INSTANTIATE_MODELS(T)                                                            \
  template ParamSet<T> generator_registry<T>(const GeneratorSpec&);                            \
  template ParamSet<T> discriminator_registry<T>(const DiscriminatorSpec&);                    \
  template ParamSet<T> init_generator<T>(const GeneratorSpec&, std::uint64_t);                 \
  template ParamSet<T> init_discriminator<T>(const DiscriminatorSpec&, std::uint64_t);         \
  template void check_generator_params<T>(const GeneratorSpec&, const ParamSet<T>&);           \
  template void check_discriminator_params<T>(const DiscriminatorSpec&, const ParamSet<T>&);   \
  template Var generator_forward<T>(Tape<T>&, const GeneratorSpec&, std::span<const Var>, Var, \
                                    Var);                                                      \
  template Var discriminator_forward<T>(Tape<T>&, const DiscriminatorSpec&,                    \
                                        std::span<const Var>, Var);                            \
  template Tensor<T> generate<T>(const GeneratorSpec&, const ParamSet<T>&, const Tensor<T>&);  \
  template Tensor<T> discriminate<T>(const DiscriminatorSpec&, const ParamSet<T>&,             \
                                     const Tensor<T>&);

DIFAUG_INSTANTIATE_MODELS(float)
DIFAUG_INSTANTIATE_MODELS(double)

}  // namespace difaug
