#include "difaug/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "difaug/linalg.hpp"
#include "difaug/parallel.hpp"

namespace difaug {

std::string_view op_name(OpId op) {
  switch (op) {
    case OpId::kParam: return "param";
    case OpId::kConstant: return "constant";
    case OpId::kAdd: return "add";
    case OpId::kSub: return "sub";
    case OpId::kMul: return "mul";
    case OpId::kScale: return "scale";
    case OpId::kSampleAffine: return "sample_affine";
    case OpId::kLeakyRelu: return "leaky_relu";
    case OpId::kSigmoid: return "sigmoid";
    case OpId::kExp: return "exp";
    case OpId::kLog: return "log";
    case OpId::kMean: return "mean";
    case OpId::kSum: return "sum";
    case OpId::kL1Distance: return "l1_distance";
    case OpId::kMatMul: return "matmul";
    case OpId::kConv2d: return "conv2d";
    case OpId::kBiasAdd: return "bias_add";
    case OpId::kUpsampleNearest2x: return "upsample_nearest2x";
    case OpId::kPixelShuffle: return "pixel_shuffle";
    case OpId::kGlobalAvgPool: return "global_avg_pool";
    case OpId::kReshape: return "reshape";
    case OpId::kBceWithLogits: return "bce_with_logits";
  }
  return "unknown";
}

namespace ops {
namespace {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
}

// Image geometry of a [C,H,W] or [N,C,H,W] tensor.
struct ImageDims {
  std::size_t n, c, h, w;
};

template <typename T>
ImageDims image_dims(const Tensor<T>& t, const char* op) {
  if (t.rank() == 3) return {1, t.dim(0), t.dim(1), t.dim(2)};
  if (t.rank() == 4) return {t.dim(0), t.dim(1), t.dim(2), t.dim(3)};
  throw ShapeError(std::string(op) + ": expected [C,H,W] or [N,C,H,W], got " +
                   shape_str(t.shape()));
}

Shape image_shape(bool batched, std::size_t n, std::size_t c, std::size_t h,
                  std::size_t w) {
  return batched ? Shape{n, c, h, w} : Shape{c, h, w};
}

template <typename T, typename F, typename G>
Var unary(Tape<T>& tape, OpId op, Var x, F f, G dfdx) {
  return tape.record(
      op, {x},
      [f](auto in) {
        Tensor<T> out(in[0]->shape());
        const auto& src = in[0]->data();
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] = f(src[i]);
        return out;
      },
      [dfdx](auto in, const Tensor<T>& out, const Tensor<T>& g, auto grad_in) {
        if (!grad_in[0]) return;
        auto dst = grad_in[0]->data();
        const auto& src = in[0]->data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i] * dfdx(src[i], out[i]);
      });
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= 0) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

// Output columns [lo, hi) read inside the input row for kernel column kj.
struct ValidRange {
  std::size_t lo = 0;
  std::size_t hi = 0;
};

inline ValidRange valid_range(std::size_t w, std::size_t ow, std::size_t kj, std::size_t stride,
                              std::size_t pad) {
  ValidRange r;
  r.lo = std::min(ow, kj >= pad ? 0 : (pad - kj + stride - 1) / stride);
  const std::size_t limit = w + pad - kj;  // ix < w  <=>  xo * stride < limit
  r.hi = std::min(ow, (limit + stride - 1) / stride);
  if (r.hi < r.lo) r.hi = r.lo;
  return r;
}

template <typename T>
void im2col(const T* x, std::size_t c, std::size_t h, std::size_t w, std::size_t kh,
            std::size_t kw, std::size_t stride, std::size_t pad, std::size_t oh,
            std::size_t ow, T* cols) {
  const std::size_t p = oh * ow;
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        T* row = cols + ((ci * kh + ki) * kw + kj) * p;
        const ValidRange r = valid_range(w, ow, kj, stride, pad);
        for (std::size_t y = 0; y < oh; ++y) {
          const std::ptrdiff_t iy =
              static_cast<std::ptrdiff_t>(y * stride + ki) - static_cast<std::ptrdiff_t>(pad);
          T* dst = row + y * ow;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
            std::fill(dst, dst + ow, T{0});
            continue;
          }
          const T* src = x + (ci * h + static_cast<std::size_t>(iy)) * w + r.lo * stride + kj - pad;
          std::fill(dst, dst + r.lo, T{0});
          if (stride == 1) {
            std::copy(src, src + (r.hi - r.lo), dst + r.lo);
          } else {
            for (std::size_t xo = r.lo; xo < r.hi; ++xo) dst[xo] = src[(xo - r.lo) * stride];
          }
          std::fill(dst + r.hi, dst + ow, T{0});
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, std::size_t c, std::size_t h, std::size_t w, std::size_t kh,
            std::size_t kw, std::size_t stride, std::size_t pad, std::size_t oh,
            std::size_t ow, T* dx) {
  const std::size_t p = oh * ow;
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        const T* row = cols + ((ci * kh + ki) * kw + kj) * p;
        const ValidRange r = valid_range(w, ow, kj, stride, pad);
        for (std::size_t y = 0; y < oh; ++y) {
          const std::ptrdiff_t iy =
              static_cast<std::ptrdiff_t>(y * stride + ki) - static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          T* dst = dx + (ci * h + static_cast<std::size_t>(iy)) * w + r.lo * stride + kj - pad;
          const T* src = row + y * ow;
          for (std::size_t xo = r.lo; xo < r.hi; ++xo) dst[(xo - r.lo) * stride] += src[xo];
        }
      }
    }
  }
}

// Per-thread im2col scratch, grown on demand and never shrunk. Slot 1 holds
// the gradient columns while slot 0 still holds the input columns.
template <typename T, int Slot = 0>
T* cols_scratch(std::size_t n) {
  thread_local AlignedBuffer<T> buf;
  if (buf.size() < n) buf.resize(n);
  return buf.data();
}

}  // namespace

std::size_t conv_out_size(std::size_t in, std::size_t k, std::size_t stride,
                          std::size_t padding) {
  return (in + 2 * padding - k) / stride + 1;
}

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
  require_same_shape(tape.value(a), tape.value(b), "add");
  return tape.record(
      OpId::kAdd, {a, b},
      [](auto in) {
        Tensor<T> out = *in[0];
        const auto& rhs = in[1]->data();
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] += rhs[i];
        return out;
      },
      [](auto, const Tensor<T>&, const Tensor<T>& g, auto grad_in) {
        for (Tensor<T>* gi : grad_in) {
          if (!gi) continue;
          for (std::size_t i = 0; i < g.numel(); ++i) (*gi)[i] += g[i];
        }
      });
}

template <typename T>
Var sub(Tape<T>& tape, Var a, Var b) {
  require_same_shape(tape.value(a), tape.value(b), "sub");
  return tape.record(
      OpId::kSub, {a, b},
      [](auto in) {
        Tensor<T> out = *in[0];
        const auto& rhs = in[1]->data();
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= rhs[i];
        return out;
      },
      [](auto, const Tensor<T>&, const Tensor<T>& g, auto grad_in) {
        if (grad_in[0]) {
          for (std::size_t i = 0; i < g.numel(); ++i) (*grad_in[0])[i] += g[i];
        }
        if (grad_in[1]) {
          for (std::size_t i = 0; i < g.numel(); ++i) (*grad_in[1])[i] -= g[i];
        }
      });
}

template <typename T>
Var mul(Tape<T>& tape, Var a, Var b) {
  require_same_shape(tape.value(a), tape.value(b), "mul");
  return tape.record(
      OpId::kMul, {a, b},
      [](auto in) {
        Tensor<T> out = *in[0];
        const auto& rhs = in[1]->data();
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= rhs[i];
        return out;
      },
      [](auto in, const Tensor<T>&, const Tensor<T>& g, auto grad_in) {
        if (grad_in[0]) {
          for (std::size_t i = 0; i < g.numel(); ++i) (*grad_in[0])[i] += g[i] * (*in[1])[i];
        }
        if (grad_in[1]) {
          for (std::size_t i = 0; i < g.numel(); ++i) (*grad_in[1])[i] += g[i] * (*in[0])[i];
        }
      });
}

template <typename T>
Var scale(Tape<T>& tape, Var a, T factor) {
  return tape.record(
      OpId::kScale, {a},
      [factor](auto in) {
        Tensor<T> out = *in[0];
        for (auto& v : out.data()) v *= factor;
        return out;
      },
      [factor](auto, const Tensor<T>&, const Tensor<T>& g, auto grad_in) {
        if (!grad_in[0]) return;
        for (std::size_t i = 0; i < g.numel(); ++i) (*grad_in[0])[i] += g[i] * factor;
      });
}

template <typename T>
Var sample_affine(Tape<T>& tape, Var x, std::vector<T> alphas, Tensor<T> offset) {
  const Tensor<T>& xv = tape.value(x);
  require_same_shape(xv, offset, "sample_affine");
  if (alphas.size() != xv.dim(0)) {
    throw ShapeError("sample_affine: " + std::to_string(alphas.size()) +
                     " alphas for leading dimension " + std::to_string(xv.dim(0)));
  }
  const std::size_t per = xv.numel() / xv.dim(0);
  return tape.record(
      OpId::kSampleAffine, {x},
      [alphas, offset = std::move(offset), per](auto in) {
        Tensor<T> out(in[0]->shape());
        for (std::size_t i = 0; i < out.numel(); ++i) {
          out[i] = alphas[i / per] * (*in[0])[i] + offset[i];
        }
        return out;
      },
      [alphas, per](auto, const Tensor<T>&, const Tensor<T>& g, auto grad_in) {
        if (!grad_in[0]) return;
        for (std::size_t i = 0; i < g.numel(); ++i) (*grad_in[0])[i] += alphas[i / per] * g[i];
      });
}

template <typename T>
Var leaky_relu(Tape<T>& tape, Var x) {
  const T slope = static_cast<T>(kLeakySlope);
  return unary<T>(
      tape, OpId::kLeakyRelu, x, [slope](T v) { return v > 0 ? v : slope * v; },
      [slope](T v, T) { return v > 0 ? T{1} : slope; });
}

template <typename T>
Var sigmoid(Tape<T>& tape, Var x) {
  return unary<T>(
      tape, OpId::kSigmoid, x, [](T v) { return stable_sigmoid(v); },
      [](T, T s) { return s * (T{1} - s); });
}

template <typename T>
Var exp(Tape<T>& tape, Var x) {
  return unary<T>(
      tape, OpId::kExp, x, [](T v) { return std::exp(v); }, [](T, T e) { return e; });
}

template <typename T>
Var log(Tape<T>& tape, Var x) {
  return unary<T>(
      tape, OpId::kLog, x, [](T v) { return std::log(v); }, [](T v, T) { return T{1} / v; });
}

template <typename T>
Var mean(Tape<T>& tape, Var x) {
  return tape.record(
      OpId::kMean, {x},
      [](auto in) {
        T acc{0};
        for (T v : in[0]->data()) acc += v;
        return Tensor<T>::scalar(acc / static_cast<T>(in[0]->numel()));
      },
      [](auto in, const Tensor<T>&, const Tensor<T>& g, auto grad_in) {
        if (!grad_in[0]) return;
        const T d = g[0] / static_cast<T>(in[0]->numel());
        for (auto& v : grad_in[0]->data()) v += d;
      });
}

template <typename T>
Var sum(Tape<T>& tape, Var x) {
  return tape.record(
      OpId::kSum, {x},
      [](auto in) {
        T acc{0};
        for (T v : in[0]->data()) acc += v;
        return Tensor<T>::scalar(acc);
      },
      [](auto, const Tensor<T>&, const Tensor<T>& g, auto grad_in) {
        if (!grad_in[0]) return;
        for (auto& v : grad_in[0]->data()) v += g[0];
      });
}

template <typename T>
Var l1_distance(Tape<T>& tape, Var a, Var b) {
  require_same_shape(tape.value(a), tape.value(b), "l1_distance");
  return tape.record(
      OpId::kL1Distance, {a, b},
      [](auto in) {
        T acc{0};
        for (std::size_t i = 0; i < in[0]->numel(); ++i) acc += std::abs((*in[0])[i] - (*in[1])[i]);
        return Tensor<T>::scalar(acc);
      },
      [](auto in, const Tensor<T>&, const Tensor<T>& g, auto grad_in) {
        for (std::size_t i = 0; i < in[0]->numel(); ++i) {
          const T d = (*in[0])[i] - (*in[1])[i];
          const T s = d > 0 ? T{1} : (d < 0 ? T{-1} : T{0});
          if (grad_in[0]) (*grad_in[0])[i] += g[0] * s;
          if (grad_in[1]) (*grad_in[1])[i] -= g[0] * s;
        }
      });
}

template <typename T>
Var matmul(Tape<T>& tape, Var a, Var b) {
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(b);
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(av.shape()) + " x " +
                     shape_str(bv.shape()));
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  return tape.record(
      OpId::kMatMul, {a, b},
      [m, k, n](auto in) {
        Tensor<T> out(Shape{m, n});
        gemm<T>(false, false, m, n, k, in[0]->data().data(), in[1]->data().data(),
                out.data().data(), false);
        return out;
      },
      [m, k, n](auto in, const Tensor<T>&, const Tensor<T>& g, auto grad_in) {
        if (grad_in[0]) {
          gemm<T>(false, true, m, k, n, g.data().data(), in[1]->data().data(),
                  grad_in[0]->data().data(), true);
        }
        if (grad_in[1]) {
          gemm<T>(true, false, k, n, m, in[0]->data().data(), g.data().data(),
                  grad_in[1]->data().data(), true);
        }
      });
}

template <typename T>
Var conv2d(Tape<T>& tape, Var input, Var kernel, std::size_t stride, std::size_t padding) {
  const Tensor<T>& xv = tape.value(input);
  const Tensor<T>& wv = tape.value(kernel);
  const ImageDims d = image_dims(xv, "conv2d");
  if (wv.rank() != 4) {
    throw ShapeError("conv2d: kernel must be [C_out,C_in,kH,kW], got " + shape_str(wv.shape()));
  }
  const std::size_t co = wv.dim(0), ci = wv.dim(1), kh = wv.dim(2), kw = wv.dim(3);
  if (ci != d.c) {
    throw ShapeError("conv2d: input has " + std::to_string(d.c) + " channels " +
                     shape_str(xv.shape()) + " but kernel expects " + std::to_string(ci) +
                     " " + shape_str(wv.shape()));
  }
  if (kh % 2 == 0 || kw % 2 == 0) {
    throw ShapeError("conv2d: kernel size must be odd, got " + shape_str(wv.shape()));
  }
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  if (d.h + 2 * padding < kh || d.w + 2 * padding < kw) {
    throw ShapeError("conv2d: kernel " + shape_str(wv.shape()) + " larger than padded input " +
                     shape_str(xv.shape()));
  }
  const std::size_t oh = conv_out_size(d.h, kh, stride, padding);
  const std::size_t ow = conv_out_size(d.w, kw, stride, padding);
  const bool batched = xv.rank() == 4;
  const std::size_t kdim = ci * kh * kw;
  const std::size_t p = oh * ow;
  const std::size_t in_per = d.c * d.h * d.w;
  const std::size_t out_per = co * p;
  const bool direct = kh == 1 && kw == 1 && stride == 1 && padding == 0;

  return tape.record(
      OpId::kConv2d, {input, kernel},
      [=](auto in) {
        Tensor<T> out(image_shape(batched, d.n, co, oh, ow));
        const T* w = in[1]->data().data();
        parallel_for(d.n, [&](std::size_t s) {
          const T* x = in[0]->data().data() + s * in_per;
          T* cols = direct ? nullptr : cols_scratch<T>(kdim * p);
          if (!direct) im2col(x, d.c, d.h, d.w, kh, kw, stride, padding, oh, ow, cols);
          gemm<T>(false, false, co, p, kdim, w, direct ? x : cols,
                  out.data().data() + s * out_per, false);
        });
        return out;
      },
      [=](auto in, const Tensor<T>&, const Tensor<T>& g, auto grad_in) {
        const T* w = in[1]->data().data();
        // Per-sample kernel gradients are reduced in sample order afterwards
        // so the result does not depend on the worker count.
        std::vector<AlignedBuffer<T>> dw(grad_in[1] ? d.n : 0);
        const bool flip =
            !direct && stride == 1 && 2 * padding + 1 == kh && 2 * padding + 1 == kw;
        AlignedBuffer<T> wflip;
        if (flip && grad_in[0]) {
          wflip.resize(co * kdim);
          for (std::size_t o = 0; o < co; ++o)
            for (std::size_t c = 0; c < d.c; ++c)
              for (std::size_t a = 0; a < kh; ++a)
                for (std::size_t b = 0; b < kw; ++b)
                  wflip[((c * co + o) * kh + (kh - 1 - a)) * kw + (kw - 1 - b)] =
                      w[((o * d.c + c) * kh + a) * kw + b];
        }
        parallel_for(d.n, [&](std::size_t s) {
          const T* x = in[0]->data().data() + s * in_per;
          const T* gs = g.data().data() + s * out_per;
          T* cols = direct ? nullptr : cols_scratch<T>(kdim * p);
          if (!direct) im2col(x, d.c, d.h, d.w, kh, kw, stride, padding, oh, ow, cols);
          if (grad_in[1]) {
            dw[s].resize(co * kdim);
            gemm<T>(false, true, co, kdim, p, gs, direct ? x : cols, dw[s].data(), false);
          }
          if (grad_in[0]) {
            T* dx = grad_in[0]->data().data() + s * in_per;
            if (direct) {
              gemm<T>(true, false, kdim, p, co, w, gs, dx, true);
            } else if (flip) {
              // Stride 1: dx is the cross-correlation of g with the flipped,
              // transposed kernel.
              const std::size_t gdim = co * kh * kw;
              T* gcols = cols_scratch<T, 1>(gdim * d.h * d.w);
              im2col(gs, co, oh, ow, kh, kw, 1, kh - 1 - padding, d.h, d.w, gcols);
              gemm<T>(false, false, d.c, d.h * d.w, gdim, wflip.data(), gcols, dx, true);
            } else {
              gemm<T>(true, false, kdim, p, co, w, gs, cols, false);
              col2im(cols, d.c, d.h, d.w, kh, kw, stride, padding, oh, ow, dx);
            }
          }
        });
        if (grad_in[1]) {
          auto dst = grad_in[1]->data();
          for (const auto& part : dw) {
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += part[i];
          }
        }
      });
}

template <typename T>
Var bias_add(Tape<T>& tape, Var x, Var bias) {
  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& bv = tape.value(bias);
  std::size_t n, c, inner;
  if (xv.rank() == 2) {
    n = xv.dim(0), c = xv.dim(1), inner = 1;
  } else {
    const ImageDims d = image_dims(xv, "bias_add");
    n = d.n, c = d.c, inner = d.h * d.w;
  }
  if (bv.rank() != 1 || bv.dim(0) != c) {
    throw ShapeError("bias_add: bias " + shape_str(bv.shape()) + " does not match " +
                     std::to_string(c) + " channels of " + shape_str(xv.shape()));
  }
  return tape.record(
      OpId::kBiasAdd, {x, bias},
      [n, c, inner](auto in) {
        Tensor<T> out = *in[0];
        for (std::size_t s = 0; s < n; ++s)
          for (std::size_t ch = 0; ch < c; ++ch) {
            const T b = (*in[1])[ch];
            T* row = out.data().data() + (s * c + ch) * inner;
            for (std::size_t i = 0; i < inner; ++i) row[i] += b;
          }
        return out;
      },
      [n, c, inner](auto, const Tensor<T>&, const Tensor<T>& g, auto grad_in) {
        if (grad_in[0]) {
          for (std::size_t i = 0; i < g.numel(); ++i) (*grad_in[0])[i] += g[i];
        }
        if (grad_in[1]) {
          for (std::size_t s = 0; s < n; ++s)
            for (std::size_t ch = 0; ch < c; ++ch) {
              const T* row = g.data().data() + (s * c + ch) * inner;
              T acc{0};
              for (std::size_t i = 0; i < inner; ++i) acc += row[i];
              (*grad_in[1])[ch] += acc;
            }
        }
      });
}

template <typename T>
Var upsample_nearest2x(Tape<T>& tape, Var x) {
  const Tensor<T>& xv = tape.value(x);
  const ImageDims d = image_dims(xv, "upsample_nearest2x");
  const bool batched = xv.rank() == 4;
  const std::size_t planes = d.n * d.c;
  const std::size_t oh = d.h * 2, ow = d.w * 2;
  return tape.record(
      OpId::kUpsampleNearest2x, {x},
      [=](auto in) {
        Tensor<T> out(image_shape(batched, d.n, d.c, oh, ow));
        for (std::size_t pl = 0; pl < planes; ++pl) {
          const T* src = in[0]->data().data() + pl * d.h * d.w;
          T* dst = out.data().data() + pl * oh * ow;
          for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t xo = 0; xo < ow; ++xo) dst[y * ow + xo] = src[(y / 2) * d.w + xo / 2];
        }
        return out;
      },
      [=](auto, const Tensor<T>&, const Tensor<T>& g, auto grad_in) {
        if (!grad_in[0]) return;
        for (std::size_t pl = 0; pl < planes; ++pl) {
          const T* src = g.data().data() + pl * oh * ow;
          T* dst = grad_in[0]->data().data() + pl * d.h * d.w;
          for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t xo = 0; xo < ow; ++xo) dst[(y / 2) * d.w + xo / 2] += src[y * ow + xo];
        }
      });
}

template <typename T>
Var pixel_shuffle(Tape<T>& tape, Var x, std::size_t factor) {
  const Tensor<T>& xv = tape.value(x);
  const ImageDims d = image_dims(xv, "pixel_shuffle");
  const std::size_t r = factor;
  if (r == 0 || d.c % (r * r) != 0) {
    throw ShapeError("pixel_shuffle: channels " + std::to_string(d.c) +
                     " not divisible by factor^2 for factor " + std::to_string(r));
  }
  const bool batched = xv.rank() == 4;
  const std::size_t oc = d.c / (r * r), oh = d.h * r, ow = d.w * r;
  // Maps output flat index -> input flat index within one sample.
  auto source = [=](std::size_t c, std::size_t y, std::size_t xo) {
    const std::size_t ic = c * r * r + (y % r) * r + (xo % r);
    return (ic * d.h + y / r) * d.w + xo / r;
  };
  const std::size_t per = d.c * d.h * d.w;
  return tape.record(
      OpId::kPixelShuffle, {x},
      [=](auto in) {
        Tensor<T> out(image_shape(batched, d.n, oc, oh, ow));
        for (std::size_t s = 0; s < d.n; ++s)
          for (std::size_t c = 0; c < oc; ++c)
            for (std::size_t y = 0; y < oh; ++y)
              for (std::size_t xo = 0; xo < ow; ++xo)
                out[s * per + (c * oh + y) * ow + xo] = (*in[0])[s * per + source(c, y, xo)];
        return out;
      },
      [=](auto, const Tensor<T>&, const Tensor<T>& g, auto grad_in) {
        if (!grad_in[0]) return;
        for (std::size_t s = 0; s < d.n; ++s)
          for (std::size_t c = 0; c < oc; ++c)
            for (std::size_t y = 0; y < oh; ++y)
              for (std::size_t xo = 0; xo < ow; ++xo)
                (*grad_in[0])[s * per + source(c, y, xo)] += g[s * per + (c * oh + y) * ow + xo];
      });
}

template <typename T>
Var global_avg_pool(Tape<T>& tape, Var x) {
  const ImageDims d = image_dims(tape.value(x), "global_avg_pool");
  const std::size_t inner = d.h * d.w;
  return tape.record(
      OpId::kGlobalAvgPool, {x},
      [d, inner](auto in) {
        Tensor<T> out(Shape{d.n, d.c});
        for (std::size_t pl = 0; pl < d.n * d.c; ++pl) {
          const T* src = in[0]->data().data() + pl * inner;
          T acc{0};
          for (std::size_t i = 0; i < inner; ++i) acc += src[i];
          out[pl] = acc / static_cast<T>(inner);
        }
        return out;
      },
      [d, inner](auto, const Tensor<T>&, const Tensor<T>& g, auto grad_in) {
        if (!grad_in[0]) return;
        for (std::size_t pl = 0; pl < d.n * d.c; ++pl) {
          const T v = g[pl] / static_cast<T>(inner);
          T* dst = grad_in[0]->data().data() + pl * inner;
          for (std::size_t i = 0; i < inner; ++i) dst[i] += v;
        }
      });
}

template <typename T>
Var reshape(Tape<T>& tape, Var x, Shape shape) {
  if (shape_numel(shape) != tape.value(x).numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(tape.value(x).shape()) + " as " +
                     shape_str(shape));
  }
  return tape.record(
      OpId::kReshape, {x}, [shape](auto in) { return in[0]->reshaped(shape); },
      [](auto, const Tensor<T>&, const Tensor<T>& g, auto grad_in) {
        if (!grad_in[0]) return;
        for (std::size_t i = 0; i < g.numel(); ++i) (*grad_in[0])[i] += g[i];
      });
}

template <typename T>
Var bce_with_logits(Tape<T>& tape, Var logits, T target) {
  if (target != T{0} && target != T{1}) {
    throw ConfigError("bce_with_logits: target must be 0 or 1, got " + std::to_string(target));
  }
  return tape.record(
      OpId::kBceWithLogits, {logits},
      [target](auto in) {
        T acc{0};
        for (T x : in[0]->data()) {
          acc += std::max(x, T{0}) - x * target + std::log1p(std::exp(-std::abs(x)));
        }
        return Tensor<T>::scalar(acc / static_cast<T>(in[0]->numel()));
      },
      [target](auto in, const Tensor<T>&, const Tensor<T>& g, auto grad_in) {
        if (!grad_in[0]) return;
        const T inv_n = T{1} / static_cast<T>(in[0]->numel());
        for (std::size_t i = 0; i < in[0]->numel(); ++i) {
          (*grad_in[0])[i] += g[0] * (stable_sigmoid((*in[0])[i]) - target) * inv_n;
        }
      });
}

#define DIFAUG_INSTANTIATE_OPS(T)                                                   \
  template Var add<T>(Tape<T>&, Var, Var);                                          \
  template Var sub<T>(Tape<T>&, Var, Var);                                          \
  template Var mul<T>(Tape<T>&, Var, Var);                                          \
  template Var scale<T>(Tape<T>&, Var, T);                                          \
  template Var sample_affine<T>(Tape<T>&, Var, std::vector<T>, Tensor<T>);          \
  template Var leaky_relu<T>(Tape<T>&, Var);                                        \
  template Var sigmoid<T>(Tape<T>&, Var);                                           \
  template Var exp<T>(Tape<T>&, Var);                                               \
  template Var log<T>(Tape<T>&, Var);                                               \
  template Var mean<T>(Tape<T>&, Var);                                              \
  template Var sum<T>(Tape<T>&, Var);                                               \
  template Var l1_distance<T>(Tape<T>&, Var, Var);                                  \
  template Var matmul<T>(Tape<T>&, Var, Var);                                       \
  template Var conv2d<T>(Tape<T>&, Var, Var, std::size_t, std::size_t);             \
  template Var bias_add<T>(Tape<T>&, Var, Var);                                     \
  template Var upsample_nearest2x<T>(Tape<T>&, Var);                                \
  template Var pixel_shuffle<T>(Tape<T>&, Var, std::size_t);                        \
  template Var global_avg_pool<T>(Tape<T>&, Var);                                   \
  template Var reshape<T>(Tape<T>&, Var, Shape);                                    \
  template Var bce_with_logits<T>(Tape<T>&, Var, T);

DIFAUG_INSTANTIATE_OPS(float)
DIFAUG_INSTANTIATE_OPS(double)

}  // namespace ops
}  // namespace difaug
