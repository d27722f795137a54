#pragma once

#include <cstddef>

#include "difaug/aligned.hpp"

namespace difaug {

// Row-major C (m x n) = op(A) * op(B), or C += ... when accumulate is set.
// op(A) is m x k and op(B) is k x n. The result depends only on the values,
// not on where the operands live in memory.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const T* a, const T* b, T* c, bool accumulate);

}  // namespace difaug
