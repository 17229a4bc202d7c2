#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "mtsnet/nn_ops.hpp"

namespace mtsnet::nn {

/// Deterministic stream of initializer seeds (splitmix64 over a counter).
class SeedStream {
public:
    explicit SeedStream(std::uint64_t seed) : state_(seed) {}
    std::uint64_t next();

private:
    std::uint64_t state_;
};

/// Visits named tensors: trainable parameters and persistent buffers.
using TensorVisitor = std::function<void(const std::string& name, Tensor& t, bool trainable)>;

inline std::string join_name(const std::string& prefix, const std::string& name) {
    return prefix.empty() ? name : prefix + "." + name;
}

/// Convolution with "same" padding. Weights are Kaiming-uniform
/// (bound sqrt(6 / fan_in)); the optional bias is uniform +-1/sqrt(fan_in).
class Conv3d {
public:
    Conv3d() = default;
    Conv3d(std::size_t in, std::size_t out, Extent3 kernel, Extent3 stride, bool bias, SeedStream& seeds);

    Tensor forward(const Tensor& x) const;
    void visit(const std::string& prefix, const TensorVisitor& fn);

    std::size_t in_channels() const { return weight.dim(1); }
    std::size_t out_channels() const { return weight.dim(0); }

    Tensor weight;
    Tensor bias;
    Extent3 kernel;
    ConvOptions options;
};

class BatchNorm3d {
public:
    BatchNorm3d() = default;
    explicit BatchNorm3d(std::size_t channels) : state(BatchNormState<float>::make(channels)) {
        state.gamma.set_requires_grad(true);
        state.beta.set_requires_grad(true);
    }

    Tensor forward(const Tensor& x, bool training) { return batchnorm3d(x, state, training); }
    void visit(const std::string& prefix, const TensorVisitor& fn);

    BatchNormState<float> state;
};

/// y = x W + b with W, b uniform +-1/sqrt(in).
class Linear {
public:
    Linear() = default;
    Linear(std::size_t in, std::size_t out, SeedStream& seeds);

    Tensor forward(const Tensor& x) const { return linear(x, weight, bias); }
    void visit(const std::string& prefix, const TensorVisitor& fn);

    Tensor weight;
    Tensor bias;
};

/// Hidden width of a factored k_t x k x k convolution chosen so that its
/// parameter count matches the full 3D kernel:
/// floor(in*out*k_t*k*k / (in*k*k + k_t*out)).
std::size_t factored_midplanes(std::size_t in, std::size_t out, std::size_t kt, std::size_t k);

/// F_T(F_S(x)): ReLU(BN(conv 1 x k x k)) with the spatial stride, then
/// ReLU(BN(conv k_t x 1 x 1)) with the temporal stride. Convs carry no bias.
class SpatialTemporalConv {
public:
    SpatialTemporalConv() = default;
    SpatialTemporalConv(std::size_t in, std::size_t mid, std::size_t out, std::size_t k_spatial, std::size_t k_temporal,
                        std::size_t spatial_stride, std::size_t temporal_stride, SeedStream& seeds);

    Tensor forward(const Tensor& x, bool training);
    void visit(const std::string& prefix, const TensorVisitor& fn);

    Conv3d spatial;
    BatchNorm3d spatial_bn;
    Conv3d temporal;
    BatchNorm3d temporal_bn;
};

}  // namespace mtsnet::nn
