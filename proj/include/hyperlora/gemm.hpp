#pragma once

#include <cstdint>

namespace hyperlora {

// C = alpha * op(A) * op(B) + beta * C, row-major, float32.
// op is transpose when the corresponding flag is set. Single-threaded and
// deterministic: the same inputs always produce the same bits.
void gemm_f32(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, float alpha, const float* a, int64_t lda,
              const float* b, int64_t ldb, float beta, float* c, int64_t ldc);

}  // namespace hyperlora
