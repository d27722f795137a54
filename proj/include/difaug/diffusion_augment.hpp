#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "difaug/noise_schedule.hpp"
#include "difaug/rng.hpp"
#include "difaug/tensor.hpp"

namespace difaug {

inline constexpr std::size_t kScaleFactor = 4;

enum class AugmentMode {
  // alpha_t x + sqrt(1 - alpha_t^2) * eta * eps
  kGaussianOnly,
  // alpha_t x + sqrt(1 - alpha_t^2) * (eta * eps + U(x_lr)), U = bicubic x4
  kLrMean,
};

std::string_view to_string(AugmentMode mode);
// Accepts "gaussian" and "lr_mean".
AugmentMode parse_augment_mode(std::string_view text);

struct AugmentConfig {
  NoiseSchedule schedule;
  double eta = 0.05;
  AugmentMode mode = AugmentMode::kLrMean;
  bool share_t_across_batch = true;
  TSamplingPolicy policy{1000};

  void validate() const;
};

template <typename T>
struct AugmentedSample {
  Tensor<T> corrupted;
  int step = 0;
  std::uint64_t noise_seed = 0;
};

/// The corruption of one input written as alpha * x + offset. The offset
/// does not depend on x, so the same record drives both the plain tensor
/// path and the differentiable tape path (ops::sample_affine).
template <typename T>
struct Corruption {
  int step = 0;
  T alpha = T{1};
  Tensor<T> offset;
  std::uint64_t noise_seed = 0;
};

// i.i.d. standard normal tensor drawn from Rng(seed).
template <typename T>
Tensor<T> standard_normal(const Shape& shape, std::uint64_t seed);

// offset = sqrt(1 - alpha^2) * (eta * noise [+ lr_mean]); lr_mean is the
// already upsampled LR image, or null for the zero-mean variant.
template <typename T>
Corruption<T> make_corruption(const AugmentConfig& cfg, int step, const Tensor<T>& noise,
                              const Tensor<T>* lr_mean);

template <typename T>
Tensor<T> apply_corruption(const Tensor<T>& x, const Corruption<T>& c);

// Zero-mean diffusion of x [3,H,W]; eta scales the noise as in the LR-mean
// variant.
template <typename T>
AugmentedSample<T> diffuse_standard(const Tensor<T>& x, int step, const AugmentConfig& cfg,
                                    Rng& rng);
template <typename T>
AugmentedSample<T> diffuse_standard_with_noise(const Tensor<T>& x, int step,
                                               const AugmentConfig& cfg, const Tensor<T>& noise);

// Diffusion whose noise is centred on the bicubic x4 upsampling of x_lr.
// x_lr must be exactly x's spatial size divided by 4.
template <typename T>
AugmentedSample<T> diffuse_lr_mean(const Tensor<T>& x, const Tensor<T>& x_lr, int step,
                                   const AugmentConfig& cfg, Rng& rng);
template <typename T>
AugmentedSample<T> diffuse_lr_mean_with_noise(const Tensor<T>& x, const Tensor<T>& x_lr, int step,
                                              const AugmentConfig& cfg, const Tensor<T>& noise);

template <typename T>
struct AugmentItem {
  const Tensor<T>* x = nullptr;
  const Tensor<T>* x_lr = nullptr;
  // Optional cached U(x_lr); computed from x_lr when null.
  const Tensor<T>* lr_upsampled = nullptr;
};

// One shared step when cfg.share_t_across_batch, otherwise one per item.
std::vector<int> draw_steps(std::size_t count, const AugmentConfig& cfg, Rng& rng);

// Per-item noise seeds are drawn from rng in item order before any noise is
// generated, so results do not depend on the worker count.
template <typename T>
std::vector<AugmentedSample<T>> augment_batch(std::span<const AugmentItem<T>> batch,
                                              const AugmentConfig& cfg, Rng& rng);
template <typename T>
std::vector<AugmentedSample<T>> augment_batch_with_steps(std::span<const AugmentItem<T>> batch,
                                                         std::span<const int> steps,
                                                         const AugmentConfig& cfg, Rng& rng);

/// Corruption of a whole [N,3,H,W] batch for use with ops::sample_affine.
template <typename T>
struct BatchCorruption {
  std::vector<int> steps;
  std::vector<T> alphas;
  Tensor<T> offset;
  std::vector<std::uint64_t> noise_seeds;
};

// lr_upsampled is the [N,3,H,W] batch of U(x_lr); it is ignored in
// GaussianOnly mode and may be null there.
template <typename T>
BatchCorruption<T> plan_batch_corruption(const Shape& batch_shape, const Tensor<T>* lr_upsampled,
                                         std::span<const int> steps, const AugmentConfig& cfg,
                                         Rng& rng);

}  // namespace difaug
