#pragma once

// Independent reference implementations shared by the unit tests and the
// acceptance runner. None of these call into the library code they check.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "difaug/calibration.hpp"
#include "difaug/image.hpp"
#include "difaug/tensor.hpp"

namespace difaug::oracles {

// Keys cubic, a = -0.5, written from the piecewise definition.
inline double keys(double x) {
  x = std::abs(x);
  if (x < 1.0) return 1.5 * x * x * x - 2.5 * x * x + 1.0;
  if (x < 2.0) return -0.5 * x * x * x + 2.5 * x * x - 4.0 * x + 2.0;
  return 0.0;
}

// Direct 2-D summation over every source pixel that the (possibly
// stretched) kernel touches, with clamped coordinates.
inline Image reference_resize(const Image& src, std::size_t oh, std::size_t ow) {
  Image out(oh, ow);
  const double sy = static_cast<double>(src.height) / oh, sx = static_cast<double>(src.width) / ow;
  const double stretch_y = std::max(1.0, sy), stretch_x = std::max(1.0, sx);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        const double cy = (y + 0.5) * sy - 0.5, cx = (x + 0.5) * sx - 0.5;
        double acc = 0.0, norm = 0.0;
        for (long i = static_cast<long>(std::floor(cy - 2 * stretch_y)) - 1; i <= static_cast<long>(std::ceil(cy + 2 * stretch_y)) + 1; ++i)
          for (long j = static_cast<long>(std::floor(cx - 2 * stretch_x)) - 1; j <= static_cast<long>(std::ceil(cx + 2 * stretch_x)) + 1; ++j) {
            const double w = keys((i - cy) / stretch_y) * keys((j - cx) / stretch_x);
            const long ci = std::clamp<long>(i, 0, static_cast<long>(src.height) - 1);
            const long cj = std::clamp<long>(j, 0, static_cast<long>(src.width) - 1);
            acc += w * src.at(c, ci, cj);
            norm += w;
          }
        out.at(c, y, x) = std::clamp(acc / norm, 0.0, 1.0);
      }
  return out;
}

// Direct-summation SSIM with a 2-D Gaussian window.
inline double reference_ssim(const Image& a, const Image& b) {
  double win[11][11], total = 0.0;
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) {
      win[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / 4.5);
      total += win[i][j];
    }
  const double c1 = 1e-4, c2 = 9e-4;
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y + 11 <= a.height; ++y)
      for (std::size_t x = 0; x + 11 <= a.width; ++x) {
        double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (int i = 0; i < 11; ++i)
          for (int j = 0; j < 11; ++j) {
            const double w = win[i][j] / total;
            const double va = a.at(c, y + i, x + j), vb = b.at(c, y + i, x + j);
            ma += w * va;
            mb += w * vb;
            saa += w * va * va;
            sbb += w * vb * vb;
            sab += w * va * vb;
          }
        const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
        sum += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++n;
      }
  return sum / static_cast<double>(n);
}

inline double logit_for(double p) { return std::log(p / (1.0 - p)); }

// Confidence c on the predicted side; `correct` picks the label.
inline PredictionRecord record(double confidence, bool predict_real, bool correct) {
  const double l = logit_for(confidence);
  const Label truth = (predict_real == correct) ? Label::kReal : Label::kFake;
  return {predict_real ? l : -l, truth};
}

inline std::vector<PredictionRecord> hand_case() {
  return {record(0.6, true, true), record(0.7, false, false), record(0.9, true, true),
          record(0.95, false, true)};
}

struct Moments {
  std::vector<double> mean, var;
};

template <typename Draw>
inline Moments monte_carlo(std::size_t n, std::size_t draws, Draw draw) {
  std::vector<double> s(n, 0.0), s2(n, 0.0);
  for (std::size_t d = 0; d < draws; ++d) {
    const Tensor<double> y = draw();
    for (std::size_t i = 0; i < n; ++i) {
      s[i] += y[i];
      s2[i] += y[i] * y[i];
    }
  }
  Moments m{std::vector<double>(n), std::vector<double>(n)};
  const double k = static_cast<double>(draws);
  for (std::size_t i = 0; i < n; ++i) {
    m.mean[i] = s[i] / k;
    m.var[i] = (s2[i] - s[i] * s[i] / k) / (k - 1.0);
  }
  return m;
}

}  // namespace difaug::oracles
