#pragma once

#include <cstddef>
#include <vector>

#include "difaug/image.hpp"
#include "difaug/tensor.hpp"

namespace difaug {

inline constexpr double kBicubicA = -0.5;

// Keys cubic convolution kernel with a = -0.5 (Catmull-Rom).
double cubic_kernel(double x);

struct WeightRow {
  std::vector<std::size_t> index;  // source indices, already clamped to range
  std::vector<double> weight;      // normalized to sum to 1
};

/// 1-D resampling taps for in_size -> out_size with pixel-center alignment.
/// When downscaling the kernel is stretched by in/out (antialiasing).
std::vector<WeightRow> bicubic_weights(std::size_t in_size, std::size_t out_size);

// Separable bicubic resize; the result is clamped to [0, 1].
Image bicubic_resize(const Image& img, std::size_t out_h, std::size_t out_w);

// Bicubic upsampling by an integer factor of [C,h,w] or [N,C,h,w] tensors
// holding [0,1] images. Same arithmetic as bicubic_resize, including the clamp.
template <typename T>
Tensor<T> bicubic_upsample(const Tensor<T>& x, std::size_t factor);

}  // namespace difaug
