#pragma once

#include <cstddef>
#include <string>

#include "mtsnet/ops.hpp"

namespace mtsnet::nn {

/// (frames, height, width) triple used for kernels, strides and padding.
struct Extent3 {
    std::size_t t = 1;
    std::size_t h = 1;
    std::size_t w = 1;

    friend bool operator==(const Extent3&, const Extent3&) = default;
};

std::string to_string(const Extent3& e);

/// "Same" padding: (k-1)/2 on each axis with an odd kernel extent, else 0.
Extent3 same_padding(const Extent3& kernel);

/// floor((in + 2p - k) / s) + 1; throws ShapeError when that is < 1.
std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad);

struct ConvOptions {
    Extent3 stride{1, 1, 1};
    Extent3 padding{0, 0, 0};
};

/// Cross-correlation of x [N,C,L,H,W] with weight [C',C,kt,kh,kw]; `bias`
/// [C'] may be undefined.
template <typename T>
BasicTensor<T> conv3d(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                      const ConvOptions& options);

/// Affine parameters plus running statistics of a per-channel normalization.
template <typename T>
struct BatchNormState {
    BasicTensor<T> gamma;
    BasicTensor<T> beta;
    BasicTensor<T> running_mean;
    BasicTensor<T> running_var;
    double momentum = 0.1;
    double eps = 1e-5;

    /// gamma = 1, beta = 0, running mean 0, running variance 1.
    static BatchNormState make(std::size_t channels);
};

/// Training mode normalizes with batch statistics over N*L*H*W and updates the
/// running buffers (unbiased variance); eval mode uses the running buffers.
template <typename T>
BasicTensor<T> batchnorm3d(const BasicTensor<T>& x, BatchNormState<T>& state, bool training);

/// Softmax along `axis`, computed after subtracting the slice maximum.
template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& x, int axis);

/// Mean over (L,H,W): [N,C,L,H,W] -> [N,C].
template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& x);

/// x [N,F] * weight [F,O] + bias [O].
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias);

}  // namespace mtsnet::nn
