#include "difaug/resample.hpp"

#include <algorithm>
#include <cmath>

#include "difaug/error.hpp"

namespace difaug {

double cubic_kernel(double x) {
  constexpr double a = kBicubicA;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

std::vector<WeightRow> bicubic_weights(std::size_t in_size, std::size_t out_size) {
  if (in_size == 0 || out_size == 0) throw ConfigError("bicubic resize with zero dimension");
  const double ratio = static_cast<double>(in_size) / static_cast<double>(out_size);
  const double stretch = std::max(1.0, ratio);
  const double support = 2.0 * stretch;
  const auto last = static_cast<std::ptrdiff_t>(in_size) - 1;

  std::vector<WeightRow> rows(out_size);
  for (std::size_t o = 0; o < out_size; ++o) {
    const double center = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    const auto lo = static_cast<std::ptrdiff_t>(std::ceil(center - support));
    const auto hi = static_cast<std::ptrdiff_t>(std::floor(center + support));
    WeightRow& row = rows[o];
    double total = 0.0;
    for (std::ptrdiff_t i = lo; i <= hi; ++i) {
      const double w = cubic_kernel((static_cast<double>(i) - center) / stretch);
      if (w == 0.0) continue;
      row.index.push_back(static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, last)));
      row.weight.push_back(w);
      total += w;
    }
    for (double& w : row.weight) w /= total;
  }
  return rows;
}

namespace {

// Resizes one h x w plane into oh x ow using precomputed taps.
void resize_plane(const double* src, std::size_t h, std::size_t w, double* dst,
                  std::size_t oh, std::size_t ow, const std::vector<WeightRow>& rows_y,
                  const std::vector<WeightRow>& rows_x) {
  std::vector<double> tmp(h * ow);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      const WeightRow& r = rows_x[x];
      double acc = 0.0;
      for (std::size_t k = 0; k < r.index.size(); ++k) acc += r.weight[k] * src[y * w + r.index[k]];
      tmp[y * ow + x] = acc;
    }
  }
  for (std::size_t y = 0; y < oh; ++y) {
    const WeightRow& r = rows_y[y];
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < r.index.size(); ++k) acc += r.weight[k] * tmp[r.index[k] * ow + x];
      dst[y * ow + x] = std::clamp(acc, 0.0, 1.0);
    }
  }
}

}  // namespace

Image bicubic_resize(const Image& img, std::size_t out_h, std::size_t out_w) {
  if (out_h == 0 || out_w == 0) {
    throw ConfigError("bicubic_resize: requested zero output dimension");
  }
  if (img.height == 0 || img.width == 0) throw ConfigError("bicubic_resize: empty input image");
  const auto rows_y = bicubic_weights(img.height, out_h);
  const auto rows_x = bicubic_weights(img.width, out_w);
  Image out(out_h, out_w);
  for (std::size_t c = 0; c < Image::kChannels; ++c) {
    resize_plane(img.pixels.data() + c * img.height * img.width, img.height, img.width,
                 out.pixels.data() + c * out_h * out_w, out_h, out_w, rows_y, rows_x);
  }
  return out;
}

template <typename T>
Tensor<T> bicubic_upsample(const Tensor<T>& x, std::size_t factor) {
  if (x.rank() != 3 && x.rank() != 4) {
    throw ShapeError("bicubic_upsample: expected [C,h,w] or [N,C,h,w], got " +
                     shape_str(x.shape()));
  }
  const std::size_t h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1);
  const std::size_t planes = x.numel() / (h * w);
  const std::size_t oh = h * factor, ow = w * factor;
  const auto rows_y = bicubic_weights(h, oh);
  const auto rows_x = bicubic_weights(w, ow);

  Shape shape = x.shape();
  shape[shape.size() - 2] = oh;
  shape[shape.size() - 1] = ow;
  Tensor<T> out(shape);
  std::vector<double> src(h * w), dst(oh * ow);
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t i = 0; i < h * w; ++i) src[i] = static_cast<double>(x[p * h * w + i]);
    resize_plane(src.data(), h, w, dst.data(), oh, ow, rows_y, rows_x);
    for (std::size_t i = 0; i < oh * ow; ++i) out[p * oh * ow + i] = static_cast<T>(dst[i]);
  }
  return out;
}

template Tensor<float> bicubic_upsample<float>(const Tensor<float>&, std::size_t);
template Tensor<double> bicubic_upsample<double>(const Tensor<double>&, std::size_t);

}  // namespace difaug
