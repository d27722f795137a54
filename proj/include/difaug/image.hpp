#pragma once

#include <cstddef>
#include <vector>

#include "difaug/tensor.hpp"

namespace difaug {

/// RGB image with planar (channel-major) pixels in [0, 1].
struct Image {
  static constexpr std::size_t kChannels = 3;

  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, double fill = 0.0)
      : height(h), width(w), pixels(kChannels * h * w, fill) {}

  double& at(std::size_t c, std::size_t y, std::size_t x) {
    return pixels[(c * height + y) * width + x];
  }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return pixels[(c * height + y) * width + x];
  }

  void clamp();

  friend bool operator==(const Image&, const Image&) = default;
};

// [3,H,W] tensor view of an image.
template <typename T>
Tensor<T> to_tensor(const Image& img);

// Accepts [3,H,W]; values are clamped to [0, 1].
template <typename T>
Image image_from_tensor(const Tensor<T>& t);

// Copies sample `index` of an [N,3,H,W] batch into an image (clamped).
template <typename T>
Image image_from_batch(const Tensor<T>& batch, std::size_t index);

// Stacks same-sized images into [N,3,H,W].
template <typename T>
Tensor<T> stack_images(const std::vector<const Image*>& images);

}  // namespace difaug
