#pragma once

#include <cstddef>
#include <vector>

#include "difaug/tape.hpp"
#include "difaug/tensor.hpp"

// Differentiable primitives. Every op records a forward and a backward rule on
// the tape. Image-like ops accept a single sample [C,H,W] or a batch
// [N,C,H,W].
namespace difaug::ops {

inline constexpr double kLeakySlope = 0.2;

template <typename T> Var add(Tape<T>& tape, Var a, Var b);
template <typename T> Var sub(Tape<T>& tape, Var a, Var b);
template <typename T> Var mul(Tape<T>& tape, Var a, Var b);
template <typename T> Var scale(Tape<T>& tape, Var a, T factor);

// y[n] = alphas[n] * x[n] + offset[n] over the leading (sample) dimension.
// offset is a constant with x's shape.
template <typename T>
Var sample_affine(Tape<T>& tape, Var x, std::vector<T> alphas, Tensor<T> offset);

// Slope 0.2 for x <= 0, so the subgradient at 0 is the negative-side slope.
template <typename T> Var leaky_relu(Tape<T>& tape, Var x);
template <typename T> Var sigmoid(Tape<T>& tape, Var x);
template <typename T> Var exp(Tape<T>& tape, Var x);
template <typename T> Var log(Tape<T>& tape, Var x);

template <typename T> Var mean(Tape<T>& tape, Var x);
template <typename T> Var sum(Tape<T>& tape, Var x);
// sum |a - b|
template <typename T> Var l1_distance(Tape<T>& tape, Var a, Var b);

// [m,k] x [k,n] -> [m,n]
template <typename T> Var matmul(Tape<T>& tape, Var a, Var b);

// Cross-correlation, zero padding. kernel is [C_out, C_in, kH, kW] with odd
// kH, kW.
template <typename T>
Var conv2d(Tape<T>& tape, Var input, Var kernel, std::size_t stride, std::size_t padding);

// Adds bias[c] along the channel axis of [C,H,W], [N,C,H,W] or [N,C].
template <typename T> Var bias_add(Tape<T>& tape, Var x, Var bias);

template <typename T> Var upsample_nearest2x(Tape<T>& tape, Var x);

// [C*r*r, H, W] -> [C, H*r, W*r]; channel c*r*r + i*r + j lands at (i, j).
template <typename T> Var pixel_shuffle(Tape<T>& tape, Var x, std::size_t factor);

// [C,H,W] -> [1,C]; [N,C,H,W] -> [N,C]
template <typename T> Var global_avg_pool(Tape<T>& tape, Var x);

template <typename T> Var reshape(Tape<T>& tape, Var x, Shape shape);

// Mean over elements of the numerically stable binary cross-entropy
// max(x,0) - x*y + log(1 + exp(-|x|)). target must be 0 or 1.
template <typename T> Var bce_with_logits(Tape<T>& tape, Var logits, T target);

// Output spatial size of conv2d.
std::size_t conv_out_size(std::size_t in, std::size_t k, std::size_t stride,
                          std::size_t padding);

}  // namespace difaug::ops
