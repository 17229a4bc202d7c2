#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mtsnet/errors.hpp"

namespace mtsnet {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Reproducible Gaussian fill: the same (mean, stddev, seed) always yields the same values.
struct NormalInit {
    double mean = 0.0;
    double stddev = 1.0;
    std::uint64_t seed = 0;
};

/// Reproducible uniform fill on [low, high).
struct UniformInit {
    double low = 0.0;
    double high = 1.0;
    std::uint64_t seed = 0;
};

/// Dense row-major tensor handle.
///
/// Copies share storage (the handle has reference semantics, like a graph
/// node). Values are fixed once an operation has produced them; only leaf
/// tensors (parameters, inputs) are mutated in place, by initializers and
/// optimizers. The gradient buffer is allocated lazily on first accumulation.
template <typename T>
class BasicTensor {
public:
    using value_type = T;

    struct Storage {
        Shape shape;
        std::vector<T> data;
        std::vector<T> grad;
        bool requires_grad = false;
    };

    BasicTensor() = default;
    explicit BasicTensor(Shape shape, T fill = T{0});
    BasicTensor(Shape shape, std::vector<T> values);
    BasicTensor(Shape shape, const NormalInit& init);
    BasicTensor(Shape shape, const UniformInit& init);

    static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape), T{0}); }
    static BasicTensor ones(Shape shape) { return BasicTensor(std::move(shape), T{1}); }
    static BasicTensor scalar(T value) { return BasicTensor(Shape{1}, value); }

    bool defined() const { return static_cast<bool>(impl_); }
    const Shape& shape() const { return impl().shape; }
    std::size_t rank() const { return impl().shape.size(); }
    /// Extent of `axis`; negative axes count from the back.
    std::size_t dim(int axis) const;
    std::size_t numel() const { return impl().data.size(); }

    std::span<const T> data() const { return impl().data; }
    /// In-place access for leaves (initialization, optimizer updates).
    std::span<T> mutable_data() { return impl().data; }
    const T* raw() const { return impl().data.data(); }

    T item() const;
    /// Element at a full multi-index.
    T at(std::initializer_list<std::size_t> index) const;

    bool requires_grad() const { return impl().requires_grad; }
    BasicTensor& set_requires_grad(bool flag);

    bool has_grad() const { return !impl().grad.empty(); }
    /// Gradient buffer; empty span when nothing has been accumulated.
    std::span<const T> grad() const { return impl().grad; }
    std::span<T> mutable_grad();
    void zero_grad();

    /// Deep copy of the values, detached from any graph.
    BasicTensor clone() const;

    bool same_storage(const BasicTensor& other) const { return impl_ == other.impl_; }
    const std::shared_ptr<Storage>& storage() const { return impl_; }

private:
    Storage& impl() const;
    std::shared_ptr<Storage> impl_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

/// Value conversion between precisions (no gradient, no graph).
template <typename To, typename From>
BasicTensor<To> convert(const BasicTensor<From>& t) {
    std::vector<To> values(t.data().begin(), t.data().end());
    return BasicTensor<To>(t.shape(), std::move(values));
}

/// Row-major strides for `shape`.
std::vector<std::size_t> contiguous_strides(const Shape& shape);

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

}  // namespace mtsnet
