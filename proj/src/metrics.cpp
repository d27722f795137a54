#include "difaug/metrics.hpp"

#include <array>
#include <cmath>
#include <string>

#include "difaug/error.hpp"

namespace difaug {
namespace {

constexpr std::size_t kWindow = 11;

void require_same_size(const Image& a, const Image& b, const char* what) {
  if (a.height != b.height || a.width != b.width) {
    throw ShapeError(std::string(what) + ": image sizes differ (" + std::to_string(a.height) +
                     "x" + std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                     std::to_string(b.width) + ")");
  }
}

std::array<double, kWindow> gaussian_window() {
  std::array<double, kWindow> g{};
  double total = 0.0;
  for (std::size_t i = 0; i < kWindow; ++i) {
    const double d = static_cast<double>(i) - 5.0;
    g[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
    total += g[i];
  }
  for (double& v : g) v /= total;
  return g;
}

// Valid-mode separable filtering of an h x w plane.
std::vector<double> filter_valid(const std::vector<double>& src, std::size_t h, std::size_t w,
                                 const std::array<double, kWindow>& g) {
  const std::size_t oh = h - kWindow + 1, ow = w - kWindow + 1;
  std::vector<double> tmp(h * ow), out(oh * ow);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < kWindow; ++k) acc += g[k] * src[y * w + x + k];
      tmp[y * ow + x] = acc;
    }
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < kWindow; ++k) acc += g[k] * tmp[(y + k) * ow + x];
      out[y * ow + x] = acc;
    }
  return out;
}

}  // namespace

double mse(const Image& a, const Image& b) {
  require_same_size(a, b, "mse");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = a.pixels[i] - b.pixels[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.pixels.size());
}

double psnr_from_mse(double m) {
  if (m == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / m));
}

double psnr(const Image& a, const Image& b) {
  require_same_size(a, b, "psnr");
  return psnr_from_mse(mse(a, b));
}

double ssim(const Image& a, const Image& b) {
  require_same_size(a, b, "ssim");
  if (a.height < kWindow || a.width < kWindow) {
    throw ShapeError("ssim: image " + std::to_string(a.height) + "x" + std::to_string(a.width) +
                     " is smaller than the 11x11 window");
  }
  constexpr double c1 = (0.01 * 1.0) * (0.01 * 1.0);
  constexpr double c2 = (0.03 * 1.0) * (0.03 * 1.0);
  const auto g = gaussian_window();
  const std::size_t h = a.height, w = a.width, plane = h * w;

  double total = 0.0;
  std::size_t positions = 0;
  for (std::size_t c = 0; c < Image::kChannels; ++c) {
    std::vector<double> x(a.pixels.begin() + static_cast<std::ptrdiff_t>(c * plane),
                          a.pixels.begin() + static_cast<std::ptrdiff_t>((c + 1) * plane));
    std::vector<double> y(b.pixels.begin() + static_cast<std::ptrdiff_t>(c * plane),
                          b.pixels.begin() + static_cast<std::ptrdiff_t>((c + 1) * plane));
    std::vector<double> xx(plane), yy(plane), xy(plane);
    for (std::size_t i = 0; i < plane; ++i) {
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mu_x = filter_valid(x, h, w, g);
    const auto mu_y = filter_valid(y, h, w, g);
    const auto e_xx = filter_valid(xx, h, w, g);
    const auto e_yy = filter_valid(yy, h, w, g);
    const auto e_xy = filter_valid(xy, h, w, g);
    for (std::size_t i = 0; i < mu_x.size(); ++i) {
      const double mx = mu_x[i], my = mu_y[i];
      const double vx = e_xx[i] - mx * mx;
      const double vy = e_yy[i] - my * my;
      const double cov = e_xy[i] - mx * my;
      total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) /
               ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    positions += mu_x.size();
  }
  return total / static_cast<double>(positions);
}

}  // namespace difaug
