#pragma once

#include <cstddef>
#include <vector>

#include "mtsnet/autograd.hpp"
#include "mtsnet/tensor.hpp"

namespace mtsnet {

enum class ElementwiseOp { add, sub, mul, relu, sigmoid };
enum class ReduceOp { sum, mean, max };

/// Broadcast result of two shapes: trailing axes aligned, extent-1 axes stretch.
Shape broadcast_shapes(const Shape& a, const Shape& b);

/// Binary ops need `b`; unary ops ignore it.
template <typename T>
BasicTensor<T> elementwise(ElementwiseOp op, const BasicTensor<T>& a, const BasicTensor<T>& b = {});

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    return elementwise(ElementwiseOp::add, a, b);
}
template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    return elementwise(ElementwiseOp::sub, a, b);
}
template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    return elementwise(ElementwiseOp::mul, a, b);
}
template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& a) {
    return elementwise(ElementwiseOp::relu, a);
}
template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& a) {
    return elementwise(ElementwiseOp::sigmoid, a);
}

/// a * factor.
template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor);

/// Batched matrix product over the trailing two axes; leading axes broadcast.
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& t, Shape new_shape);

/// out.shape[i] = t.shape[order[i]].
template <typename T>
BasicTensor<T> permute(const BasicTensor<T>& t, const std::vector<std::size_t>& order);

/// Reduces over `axes` (negative allowed). Reduced axes are dropped unless
/// `keepdim`; reducing every axis without keepdim yields shape [1].
/// Max routes its gradient to the lowest flat index among ties.
template <typename T>
BasicTensor<T> reduce(ReduceOp op, const BasicTensor<T>& t, std::vector<int> axes, bool keepdim = false);

/// Sum of every element, shape [1].
template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& t) {
    std::vector<int> axes;
    for (std::size_t i = 0; i < t.rank(); ++i) axes.push_back(static_cast<int>(i));
    return reduce(ReduceOp::sum, t, axes);
}

/// Mean of every element, shape [1].
template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& t) {
    std::vector<int> axes;
    for (std::size_t i = 0; i < t.rank(); ++i) axes.push_back(static_cast<int>(i));
    return reduce(ReduceOp::mean, t, axes);
}

}  // namespace mtsnet
