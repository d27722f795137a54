#pragma once

#include "difaug/image.hpp"

namespace difaug {

// Reported value for identical images (the true PSNR is +inf).
inline constexpr double kPsnrCap = 99.0;

// 10 log10(1 / MSE) over all channels with peak 1; capped at kPsnrCap.
double psnr(const Image& a, const Image& b);
double mse(const Image& a, const Image& b);
double psnr_from_mse(double mse);

/// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, dynamic range 1, evaluated at every position where the window
/// fits inside the image and averaged over positions and channels.
double ssim(const Image& a, const Image& b);

}  // namespace difaug
