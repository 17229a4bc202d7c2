#pragma once

#include <cstddef>

#include <Eigen/Core>

namespace mtsnet::detail {

/// C = alpha * op(A) * op(B) + beta * C on row-major operands with explicit
/// leading dimensions. op(X) is X or its transpose. M x N result, K inner.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha, const T* a,
          std::size_t lda, const T* b, std::size_t ldb, T beta, T* c, std::size_t ldc) {
    using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using ConstMap = Eigen::Map<const RowMajor, Eigen::Unaligned, Eigen::OuterStride<>>;
    using MutMap = Eigen::Map<RowMajor, Eigen::Unaligned, Eigen::OuterStride<>>;

    const auto rows = static_cast<Eigen::Index>(m);
    const auto cols = static_cast<Eigen::Index>(n);
    const auto inner = static_cast<Eigen::Index>(k);

    MutMap cm(c, rows, cols, Eigen::OuterStride<>(static_cast<Eigen::Index>(ldc)));
    if (beta == T{0}) {
        cm.setZero();
    } else if (beta != T{1}) {
        cm *= beta;
    }
    if (m == 0 || n == 0 || k == 0) return;

    const ConstMap am = trans_a ? ConstMap(a, inner, rows, Eigen::OuterStride<>(static_cast<Eigen::Index>(lda)))
                                : ConstMap(a, rows, inner, Eigen::OuterStride<>(static_cast<Eigen::Index>(lda)));
    const ConstMap bm = trans_b ? ConstMap(b, cols, inner, Eigen::OuterStride<>(static_cast<Eigen::Index>(ldb)))
                                : ConstMap(b, inner, cols, Eigen::OuterStride<>(static_cast<Eigen::Index>(ldb)));
    if (!trans_a && !trans_b) {
        cm.noalias() += alpha * am * bm;
    } else if (trans_a && !trans_b) {
        cm.noalias() += alpha * am.transpose() * bm;
    } else if (!trans_a && trans_b) {
        cm.noalias() += alpha * am * bm.transpose();
    } else {
        cm.noalias() += alpha * am.transpose() * bm.transpose();
    }
}

}  // namespace mtsnet::detail
