#include "difaug/linalg.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cstdint>
#include <vector>

namespace difaug {
namespace {

template <typename T>
struct Scratch {
  AlignedBuffer<T> a, b, c;
};

bool aligned(const void* p) {
  return reinterpret_cast<std::uintptr_t>(p) % kGemmAlignment == 0;
}

template <typename T>
const T* staged(const T* p, std::size_t n, AlignedBuffer<T>& buf) {
  if (aligned(p)) return p;
  buf.assign(p, p + n);
  return buf.data();
}

template <typename T>
Scratch<T>& scratch() {
  thread_local Scratch<T> s;
  return s;
}

}  // namespace

// Eigen picks its vectorized peeling from runtime pointer alignment, which
// changes the summation order. Unaligned operands are staged in aligned
// scratch so the result depends only on the values and sizes.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const T* a, const T* b, T* c, bool accumulate) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using CMap = Eigen::Map<const Mat, Eigen::Aligned64>;
  const auto M = static_cast<Eigen::Index>(m);
  const auto N = static_cast<Eigen::Index>(n);
  const auto K = static_cast<Eigen::Index>(k);

  Scratch<T>& s = scratch<T>();
  const T* pa = staged(a, m * k, s.a);
  const T* pb = staged(b, k * n, s.b);
  const bool direct_out = !accumulate && aligned(c);
  if (!direct_out) s.c.resize(m * n);
  Eigen::Map<Mat, Eigen::Aligned64> out(direct_out ? c : s.c.data(), M, N);
  auto run = [&](const auto& lhs, const auto& rhs) { out.noalias() = lhs * rhs; };
  if (!trans_a && !trans_b) {
    run(CMap(pa, M, K), CMap(pb, K, N));
  } else if (trans_a && !trans_b) {
    run(CMap(pa, K, M).transpose(), CMap(pb, K, N));
  } else if (!trans_a && trans_b) {
    run(CMap(pa, M, K), CMap(pb, N, K).transpose());
  } else {
    run(CMap(pa, K, M).transpose(), CMap(pb, N, K).transpose());
  }
  if (accumulate) {
    for (std::size_t i = 0; i < m * n; ++i) c[i] += s.c[i];
  } else if (!direct_out) {
    std::copy(s.c.begin(), s.c.end(), c);
  }
}

template void gemm<float>(bool, bool, std::size_t, std::size_t, std::size_t,
                          const float*, const float*, float*, bool);
template void gemm<double>(bool, bool, std::size_t, std::size_t, std::size_t,
                           const double*, const double*, double*, bool);

}  // namespace difaug
