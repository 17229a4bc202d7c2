#include "mtsnet/layers.hpp"

#include <cmath>

namespace mtsnet::nn {

std::uint64_t SeedStream::next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

Conv3d::Conv3d(std::size_t in, std::size_t out, Extent3 k, Extent3 stride, bool with_bias, SeedStream& seeds)
    : kernel(k), options{stride, same_padding(k)} {
    const double fan_in = static_cast<double>(in * k.t * k.h * k.w);
    const double bound = std::sqrt(6.0 / fan_in);
    weight = Tensor({out, in, k.t, k.h, k.w}, UniformInit{-bound, bound, seeds.next()});
    weight.set_requires_grad(true);
    if (with_bias) {
        const double b = 1.0 / std::sqrt(fan_in);
        bias = Tensor({out}, UniformInit{-b, b, seeds.next()});
        bias.set_requires_grad(true);
    }
}

Tensor Conv3d::forward(const Tensor& x) const { return conv3d(x, weight, bias, options); }

void Conv3d::visit(const std::string& prefix, const TensorVisitor& fn) {
    fn(join_name(prefix, "weight"), weight, true);
    if (bias.defined()) fn(join_name(prefix, "bias"), bias, true);
}

void BatchNorm3d::visit(const std::string& prefix, const TensorVisitor& fn) {
    fn(join_name(prefix, "gamma"), state.gamma, true);
    fn(join_name(prefix, "beta"), state.beta, true);
    fn(join_name(prefix, "running_mean"), state.running_mean, false);
    fn(join_name(prefix, "running_var"), state.running_var, false);
}

Linear::Linear(std::size_t in, std::size_t out, SeedStream& seeds) {
    const double b = 1.0 / std::sqrt(static_cast<double>(in));
    weight = Tensor({in, out}, UniformInit{-b, b, seeds.next()});
    bias = Tensor({out}, UniformInit{-b, b, seeds.next()});
    weight.set_requires_grad(true);
    bias.set_requires_grad(true);
}

void Linear::visit(const std::string& prefix, const TensorVisitor& fn) {
    fn(join_name(prefix, "weight"), weight, true);
    fn(join_name(prefix, "bias"), bias, true);
}

std::size_t factored_midplanes(std::size_t in, std::size_t out, std::size_t kt, std::size_t k) {
    return (in * out * kt * k * k) / (in * k * k + kt * out);
}

SpatialTemporalConv::SpatialTemporalConv(std::size_t in, std::size_t mid, std::size_t out, std::size_t k_spatial,
                                         std::size_t k_temporal, std::size_t spatial_stride,
                                         std::size_t temporal_stride, SeedStream& seeds)
    : spatial(in, mid, {1, k_spatial, k_spatial}, {1, spatial_stride, spatial_stride}, false, seeds),
      spatial_bn(mid),
      temporal(mid, out, {k_temporal, 1, 1}, {temporal_stride, 1, 1}, false, seeds),
      temporal_bn(out) {}

Tensor SpatialTemporalConv::forward(const Tensor& x, bool training) {
    Tensor s = relu(spatial_bn.forward(spatial.forward(x), training));
    return relu(temporal_bn.forward(temporal.forward(s), training));
}

void SpatialTemporalConv::visit(const std::string& prefix, const TensorVisitor& fn) {
    spatial.visit(join_name(prefix, "spatial"), fn);
    spatial_bn.visit(join_name(prefix, "spatial_bn"), fn);
    temporal.visit(join_name(prefix, "temporal"), fn);
    temporal_bn.visit(join_name(prefix, "temporal_bn"), fn);
}

}  // namespace mtsnet::nn
