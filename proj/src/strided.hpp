#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "mtsnet/tensor.hpp"

namespace mtsnet::detail {

/// Strides of an operand of `shape` viewed in the index space of `out`
/// (trailing-aligned); broadcast axes get stride 0.
inline std::vector<std::size_t> broadcast_strides(const Shape& shape, const Shape& out) {
    std::vector<std::size_t> strides(out.size(), 0);
    const auto own = contiguous_strides(shape);
    const std::size_t offset = out.size() - shape.size();
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (shape[i] != 1) strides[offset + i] = own[i];
    }
    return strides;
}

/// Walks every multi-index of `shape` in row-major order while tracking one
/// flat offset per operand. `fn(offsets, count, steps)` is called once per
/// run along the innermost (coalesced) axis.
template <std::size_t N, typename Fn>
void strided_walk(const Shape& shape, const std::array<std::vector<std::size_t>, N>& strides, Fn&& fn) {
    // Drop unit axes and merge axes that are contiguous for every operand.
    Shape dims;
    std::array<std::vector<std::size_t>, N> st;
    for (std::size_t d = 0; d < shape.size(); ++d) {
        if (shape[d] == 1) continue;
        bool merge = !dims.empty();
        for (std::size_t k = 0; k < N && merge; ++k) {
            merge = st[k].back() == strides[k][d] * shape[d];
        }
        if (merge) {
            dims.back() *= shape[d];
            for (std::size_t k = 0; k < N; ++k) st[k].back() = strides[k][d];
        } else {
            dims.push_back(shape[d]);
            for (std::size_t k = 0; k < N; ++k) st[k].push_back(strides[k][d]);
        }
    }
    if (dims.empty()) {
        dims.push_back(1);
        for (std::size_t k = 0; k < N; ++k) st[k].push_back(0);
    }

    const std::size_t rank = dims.size();
    const std::size_t inner = dims[rank - 1];
    std::array<std::size_t, N> steps{};
    for (std::size_t k = 0; k < N; ++k) steps[k] = st[k][rank - 1];
    std::size_t outer = 1;
    for (std::size_t d = 0; d + 1 < rank; ++d) outer *= dims[d];

    std::vector<std::size_t> idx(rank, 0);
    std::array<std::size_t, N> off{};
    for (std::size_t o = 0; o < outer; ++o) {
        fn(off, inner, steps);
        for (std::size_t d = rank - 1; d-- > 0;) {
            ++idx[d];
            for (std::size_t k = 0; k < N; ++k) off[k] += st[k][d];
            if (idx[d] < dims[d]) break;
            for (std::size_t k = 0; k < N; ++k) off[k] -= st[k][d] * dims[d];
            idx[d] = 0;
        }
    }
}

}  // namespace mtsnet::detail
