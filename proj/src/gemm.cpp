#include "hyperlora/gemm.hpp"

#include <Eigen/Core>

namespace hyperlora {

namespace {
using MatMap = Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>, 0,
                          Eigen::OuterStride<>>;
using MutMap =
    Eigen::Map<Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>, 0, Eigen::OuterStride<>>;
}  // namespace

void gemm_f32(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, float alpha, const float* a, int64_t lda,
              const float* b, int64_t ldb, float beta, float* c, int64_t ldc) {
    MatMap A(a, trans_a ? k : m, trans_a ? m : k, Eigen::OuterStride<>(lda));
    MatMap B(b, trans_b ? n : k, trans_b ? k : n, Eigen::OuterStride<>(ldb));
    MutMap C(c, m, n, Eigen::OuterStride<>(ldc));

    if (beta == 0.0f) {
        if (trans_a && trans_b)
            C.noalias() = alpha * (A.transpose() * B.transpose());
        else if (trans_a)
            C.noalias() = alpha * (A.transpose() * B);
        else if (trans_b)
            C.noalias() = alpha * (A * B.transpose());
        else
            C.noalias() = alpha * (A * B);
    } else {
        if (beta != 1.0f) C *= beta;
        if (trans_a && trans_b)
            C.noalias() += alpha * (A.transpose() * B.transpose());
        else if (trans_a)
            C.noalias() += alpha * (A.transpose() * B);
        else if (trans_b)
            C.noalias() += alpha * (A * B.transpose());
        else
            C.noalias() += alpha * (A * B);
    }
}

}  // namespace hyperlora
