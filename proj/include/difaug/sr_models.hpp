#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

#include "json.hpp"

#include "difaug/params.hpp"
#include "difaug/tape.hpp"
#include "difaug/tensor.hpp"

namespace difaug {

/// x4 generator: conv_first, residual blocks (conv-lrelu-conv plus skip) and
/// conv_body at LR resolution, two nearest-x2 + conv + lrelu stages,
/// conv_last, then the bicubic upsampling of the input is added.
struct GeneratorSpec {
  std::size_t base_channels = 32;
  std::size_t num_blocks = 4;
  std::size_t scale = 4;

  void validate() const;
  friend bool operator==(const GeneratorSpec&, const GeneratorSpec&) = default;
};

/// Stride-2 3x3 convs with leaky-relu (channels base, 2 base, 4 base, ...),
/// global average pool, then an affine head to one logit.
struct DiscriminatorSpec {
  std::size_t base_channels = 32;
  std::size_t num_downsamples = 3;

  void validate() const;
  std::size_t feature_channels() const;
  friend bool operator==(const DiscriminatorSpec&, const DiscriminatorSpec&) = default;
};

nlohmann::json to_json(const GeneratorSpec& spec);
nlohmann::json to_json(const DiscriminatorSpec& spec);
GeneratorSpec generator_spec_from_json(const nlohmann::json& j);
DiscriminatorSpec discriminator_spec_from_json(const nlohmann::json& j);

// Zero-filled registries; parameter count is a function of the spec only.
template <typename T>
ParamSet<T> generator_registry(const GeneratorSpec& spec);
template <typename T>
ParamSet<T> discriminator_registry(const DiscriminatorSpec& spec);

// Conv kernels ~ N(0, 2 / fan_in), biases 0. The discriminator head weight
// starts at 0 so an untrained discriminator outputs logit 0 everywhere.
template <typename T>
ParamSet<T> init_generator(const GeneratorSpec& spec, std::uint64_t seed);
template <typename T>
ParamSet<T> init_discriminator(const DiscriminatorSpec& spec, std::uint64_t seed);

// Throws ConfigError naming the first mismatching entry.
template <typename T>
void check_generator_params(const GeneratorSpec& spec, const ParamSet<T>& params);
template <typename T>
void check_discriminator_params(const DiscriminatorSpec& spec, const ParamSet<T>& params);

/// lr is [3,h,w] or [N,3,h,w]; lr_upsampled is its bicubic x4 upsampling
/// (constant on the tape). Returns the unclamped SR output.
template <typename T>
Var generator_forward(Tape<T>& tape, const GeneratorSpec& spec, std::span<const Var> params,
                      Var lr, Var lr_upsampled);

/// x is [3,H,W] or [N,3,H,W]; returns logits of shape [1] or [N].
template <typename T>
Var discriminator_forward(Tape<T>& tape, const DiscriminatorSpec& spec,
                          std::span<const Var> params, Var x);

// Gradient-free conveniences.
template <typename T>
Tensor<T> generate(const GeneratorSpec& spec, const ParamSet<T>& params, const Tensor<T>& lr);
template <typename T>
Tensor<T> discriminate(const DiscriminatorSpec& spec, const ParamSet<T>& params,
                       const Tensor<T>& x);

}  // namespace difaug
