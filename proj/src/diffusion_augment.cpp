#include "difaug/diffusion_augment.hpp"

#include <cmath>
#include <string>

#include "difaug/error.hpp"
#include "difaug/parallel.hpp"
#include "difaug/resample.hpp"

namespace difaug {

std::string_view to_string(AugmentMode mode) {
  return mode == AugmentMode::kGaussianOnly ? "gaussian" : "lr_mean";
}

AugmentMode parse_augment_mode(std::string_view text) {
  if (text == "gaussian") return AugmentMode::kGaussianOnly;
  if (text == "lr_mean") return AugmentMode::kLrMean;
  throw ConfigError("unknown augment mode '" + std::string(text) +
                    "' (expected 'gaussian' or 'lr_mean')");
}

void AugmentConfig::validate() const {
  schedule.validate();
  if (!(eta >= 0.0) || !std::isfinite(eta)) {
    throw ConfigError("augment eta must be a finite value >= 0, got " + std::to_string(eta));
  }
  if (policy.max_step < 0 || policy.max_step > schedule.total_steps) {
    throw ConfigError("augment max_step " + std::to_string(policy.max_step) +
                      " outside [0, total_steps]");
  }
}

template <typename T>
Tensor<T> standard_normal(const Shape& shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<T> out(shape);
  for (auto& v : out.data()) v = static_cast<T>(rng.normal());
  return out;
}

template <typename T>
Corruption<T> make_corruption(const AugmentConfig& cfg, int step, const Tensor<T>& noise,
                              const Tensor<T>* lr_mean) {
  const double alpha = cfg.schedule.alpha(step);
  const T coeff = static_cast<T>(std::sqrt(1.0 - alpha * alpha));
  const T eta = static_cast<T>(cfg.eta);
  if (lr_mean && lr_mean->shape() != noise.shape()) {
    throw ShapeError("LR mean " + shape_str(lr_mean->shape()) + " does not match noise " +
                     shape_str(noise.shape()));
  }
  Corruption<T> c;
  c.step = step;
  c.alpha = static_cast<T>(alpha);
  c.offset = Tensor<T>(noise.shape());
  for (std::size_t i = 0; i < noise.numel(); ++i) {
    T shifted = eta * noise[i];
    if (lr_mean) shifted = shifted + (*lr_mean)[i];
    c.offset[i] = coeff * shifted;
  }
  return c;
}

template <typename T>
Tensor<T> apply_corruption(const Tensor<T>& x, const Corruption<T>& c) {
  if (x.shape() != c.offset.shape()) {
    throw ShapeError("corruption offset " + shape_str(c.offset.shape()) + " does not match " +
                     shape_str(x.shape()));
  }
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = c.alpha * x[i] + c.offset[i];
  return out;
}

namespace {

template <typename T>
void check_image(const Tensor<T>& x) {
  if (x.rank() != 3) {
    throw ShapeError("diffusion input must be [C,H,W], got " + shape_str(x.shape()));
  }
}

template <typename T>
Tensor<T> upsample_lr(const Tensor<T>& x, const Tensor<T>& x_lr) {
  check_image(x_lr);
  if (x_lr.dim(0) != x.dim(0) || x_lr.dim(1) * kScaleFactor != x.dim(1) ||
      x_lr.dim(2) * kScaleFactor != x.dim(2)) {
    throw ShapeError("LR image " + shape_str(x_lr.shape()) + " is not the x4 downscale of " +
                     shape_str(x.shape()));
  }
  return bicubic_upsample(x_lr, kScaleFactor);
}

template <typename T>
AugmentedSample<T> corrupt(const Tensor<T>& x, int step, const AugmentConfig& cfg,
                           const Tensor<T>& noise, const Tensor<T>* lr_mean,
                           std::uint64_t seed) {
  check_image(x);
  if (noise.shape() != x.shape()) {
    throw ShapeError("noise " + shape_str(noise.shape()) + " does not match input " +
                     shape_str(x.shape()));
  }
  Corruption<T> c = make_corruption(cfg, step, noise, lr_mean);
  return {apply_corruption(x, c), step, seed};
}

}  // namespace

template <typename T>
AugmentedSample<T> diffuse_standard_with_noise(const Tensor<T>& x, int step,
                                               const AugmentConfig& cfg, const Tensor<T>& noise) {
  return corrupt<T>(x, step, cfg, noise, nullptr, 0);
}

template <typename T>
AugmentedSample<T> diffuse_standard(const Tensor<T>& x, int step, const AugmentConfig& cfg,
                                    Rng& rng) {
  check_image(x);
  cfg.schedule.alpha(step);
  const std::uint64_t seed = rng.next_u64();
  return corrupt<T>(x, step, cfg, standard_normal<T>(x.shape(), seed), nullptr, seed);
}

template <typename T>
AugmentedSample<T> diffuse_lr_mean_with_noise(const Tensor<T>& x, const Tensor<T>& x_lr, int step,
                                              const AugmentConfig& cfg, const Tensor<T>& noise) {
  check_image(x);
  const Tensor<T> mean = upsample_lr(x, x_lr);
  return corrupt<T>(x, step, cfg, noise, &mean, 0);
}

template <typename T>
AugmentedSample<T> diffuse_lr_mean(const Tensor<T>& x, const Tensor<T>& x_lr, int step,
                                   const AugmentConfig& cfg, Rng& rng) {
  check_image(x);
  const Tensor<T> mean = upsample_lr(x, x_lr);
  cfg.schedule.alpha(step);
  const std::uint64_t seed = rng.next_u64();
  return corrupt<T>(x, step, cfg, standard_normal<T>(x.shape(), seed), &mean, seed);
}

std::vector<int> draw_steps(std::size_t count, const AugmentConfig& cfg, Rng& rng) {
  if (count == 0) throw ConfigError("cannot draw diffusion steps for an empty batch");
  std::vector<int> steps(count);
  if (cfg.share_t_across_batch) {
    const int s = sample_step(cfg.schedule, cfg.policy, rng);
    std::fill(steps.begin(), steps.end(), s);
  } else {
    for (int& s : steps) s = sample_step(cfg.schedule, cfg.policy, rng);
  }
  return steps;
}

template <typename T>
std::vector<AugmentedSample<T>> augment_batch_with_steps(std::span<const AugmentItem<T>> batch,
                                                         std::span<const int> steps,
                                                         const AugmentConfig& cfg, Rng& rng) {
  if (batch.empty()) throw ConfigError("augment_batch: empty batch");
  if (steps.size() != batch.size()) {
    throw ConfigError("augment_batch: " + std::to_string(steps.size()) + " steps for " +
                      std::to_string(batch.size()) + " items");
  }
  std::vector<std::uint64_t> seeds(batch.size());
  for (auto& s : seeds) s = rng.next_u64();

  std::vector<AugmentedSample<T>> out(batch.size());
  parallel_for(batch.size(), [&](std::size_t i) {
    const AugmentItem<T>& item = batch[i];
    check_image(*item.x);
    const Tensor<T> noise = standard_normal<T>(item.x->shape(), seeds[i]);
    if (cfg.mode == AugmentMode::kGaussianOnly) {
      out[i] = corrupt<T>(*item.x, steps[i], cfg, noise, nullptr, seeds[i]);
    } else if (item.lr_upsampled) {
      out[i] = corrupt<T>(*item.x, steps[i], cfg, noise, item.lr_upsampled, seeds[i]);
    } else {
      if (!item.x_lr) throw ConfigError("LR-mean augmentation needs the LR image");
      const Tensor<T> mean = upsample_lr(*item.x, *item.x_lr);
      out[i] = corrupt<T>(*item.x, steps[i], cfg, noise, &mean, seeds[i]);
    }
  });
  return out;
}

template <typename T>
std::vector<AugmentedSample<T>> augment_batch(std::span<const AugmentItem<T>> batch,
                                              const AugmentConfig& cfg, Rng& rng) {
  if (batch.empty()) throw ConfigError("augment_batch: empty batch");
  const std::vector<int> steps = draw_steps(batch.size(), cfg, rng);
  return augment_batch_with_steps<T>(batch, steps, cfg, rng);
}

template <typename T>
BatchCorruption<T> plan_batch_corruption(const Shape& batch_shape, const Tensor<T>* lr_upsampled,
                                         std::span<const int> steps, const AugmentConfig& cfg,
                                         Rng& rng) {
  if (batch_shape.size() != 4) {
    throw ShapeError("batch corruption expects [N,C,H,W], got " + shape_str(batch_shape));
  }
  const std::size_t n = batch_shape[0];
  if (steps.size() != n) throw ConfigError("one diffusion step per sample is required");
  const bool lr_mean = cfg.mode == AugmentMode::kLrMean;
  if (lr_mean && (!lr_upsampled || lr_upsampled->shape() != batch_shape)) {
    throw ShapeError("LR-mean corruption needs an upsampled LR batch of shape " +
                     shape_str(batch_shape));
  }
  const Shape item_shape(batch_shape.begin() + 1, batch_shape.end());
  const std::size_t per = shape_numel(item_shape);

  BatchCorruption<T> plan;
  plan.steps.assign(steps.begin(), steps.end());
  plan.alphas.resize(n);
  plan.noise_seeds.resize(n);
  for (auto& s : plan.noise_seeds) s = rng.next_u64();
  plan.offset = Tensor<T>(batch_shape);

  parallel_for(n, [&](std::size_t i) {
    const Tensor<T> noise = standard_normal<T>(item_shape, plan.noise_seeds[i]);
    Tensor<T> mean;
    if (lr_mean) {
      std::vector<T> slice(lr_upsampled->data().begin() + static_cast<std::ptrdiff_t>(i * per),
                           lr_upsampled->data().begin() + static_cast<std::ptrdiff_t>((i + 1) * per));
      mean = Tensor<T>(item_shape, std::move(slice));
    }
    Corruption<T> c = make_corruption(cfg, steps[i], noise, lr_mean ? &mean : nullptr);
    plan.alphas[i] = c.alpha;
    std::copy(c.offset.data().begin(), c.offset.data().end(),
              plan.offset.data().begin() + static_cast<std::ptrdiff_t>(i * per));
  });
  return plan;
}

#define DIFAUG_INSTANTIATE_AUGMENT(T)                                                          \
  template Tensor<T> standard_normal<T>(const Shape&, std::uint64_t);                         \
  template Corruption<T> make_corruption<T>(const AugmentConfig&, int, const Tensor<T>&,      \
                                            const Tensor<T>*);                                \
  template Tensor<T> apply_corruption<T>(const Tensor<T>&, const Corruption<T>&);             \
  template AugmentedSample<T> diffuse_standard<T>(const Tensor<T>&, int,                      \
                                                  const AugmentConfig&, Rng&);                \
  template AugmentedSample<T> diffuse_standard_with_noise<T>(                                 \
      const Tensor<T>&, int, const AugmentConfig&, const Tensor<T>&);                         \
  template AugmentedSample<T> diffuse_lr_mean<T>(const Tensor<T>&, const Tensor<T>&, int,     \
                                                 const AugmentConfig&, Rng&);                 \
  template AugmentedSample<T> diffuse_lr_mean_with_noise<T>(                                  \
      const Tensor<T>&, const Tensor<T>&, int, const AugmentConfig&, const Tensor<T>&);       \
  template std::vector<AugmentedSample<T>> augment_batch<T>(std::span<const AugmentItem<T>>,  \
                                                            const AugmentConfig&, Rng&);      \
  template std::vector<AugmentedSample<T>> augment_batch_with_steps<T>(                       \
      std::span<const AugmentItem<T>>, std::span<const int>, const AugmentConfig&, Rng&);     \
  template BatchCorruption<T> plan_batch_corruption<T>(const Shape&, const Tensor<T>*,        \
                                                       std::span<const int>,                  \
                                                       const AugmentConfig&, Rng&);

DIFAUG_INSTANTIATE_AUGMENT(float)
DIFAUG_INSTANTIATE_AUGMENT(double)

}  // namespace difaug
