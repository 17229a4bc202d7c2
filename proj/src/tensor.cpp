#include "mtsnet/tensor.hpp"

#include <algorithm>
#include <random>
#include <sstream>

namespace mtsnet {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::vector<std::size_t> contiguous_strides(const Shape& shape) {
    std::vector<std::size_t> strides(shape.size(), 1);
    for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
    return strides;
}

namespace {

void validate_shape(const Shape& shape) {
    if (shape.empty()) throw ShapeError("tensor shape must have at least one extent");
    for (std::size_t e : shape) {
        if (e == 0) throw ShapeError("tensor extents must be >= 1, got " + shape_str(shape));
    }
}

}  // namespace

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill) : impl_(std::make_shared<Storage>()) {
    validate_shape(shape);
    impl_->data.assign(shape_numel(shape), fill);
    impl_->shape = std::move(shape);
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<Storage>()) {
    validate_shape(shape);
    if (values.size() != shape_numel(shape)) {
        throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                         shape_str(shape));
    }
    impl_->data = std::move(values);
    impl_->shape = std::move(shape);
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, const NormalInit& init) : BasicTensor(std::move(shape), T{0}) {
    std::mt19937_64 rng(init.seed);
    std::normal_distribution<double> dist(init.mean, init.stddev);
    for (T& v : impl_->data) v = static_cast<T>(dist(rng));
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, const UniformInit& init) : BasicTensor(std::move(shape), T{0}) {
    std::mt19937_64 rng(init.seed);
    std::uniform_real_distribution<double> dist(init.low, init.high);
    for (T& v : impl_->data) v = static_cast<T>(dist(rng));
}

template <typename T>
typename BasicTensor<T>::Storage& BasicTensor<T>::impl() const {
    if (!impl_) throw ContractError("use of an undefined tensor");
    return *impl_;
}

template <typename T>
std::size_t BasicTensor<T>::dim(int axis) const {
    const int r = static_cast<int>(rank());
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(r));
    return impl().shape[static_cast<std::size_t>(a)];
}

template <typename T>
T BasicTensor<T>::item() const {
    if (numel() != 1) throw ContractError("item() needs a single-element tensor, got " + shape_str(shape()));
    return impl().data[0];
}

template <typename T>
T BasicTensor<T>::at(std::initializer_list<std::size_t> index) const {
    const Shape& s = shape();
    if (index.size() != s.size()) throw ShapeError("index rank mismatch for " + shape_str(s));
    std::size_t flat = 0;
    std::size_t i = 0;
    for (std::size_t v : index) {
        if (v >= s[i]) throw ShapeError("index out of range for " + shape_str(s));
        flat = flat * s[i] + v;
        ++i;
    }
    return impl().data[flat];
}

template <typename T>
BasicTensor<T>& BasicTensor<T>::set_requires_grad(bool flag) {
    impl().requires_grad = flag;
    return *this;
}

template <typename T>
std::span<T> BasicTensor<T>::mutable_grad() {
    Storage& s = impl();
    if (s.grad.empty()) s.grad.assign(s.data.size(), T{0});
    return s.grad;
}

template <typename T>
void BasicTensor<T>::zero_grad() {
    Storage& s = impl();
    std::fill(s.grad.begin(), s.grad.end(), T{0});
}

template <typename T>
BasicTensor<T> BasicTensor<T>::clone() const {
    return BasicTensor<T>(shape(), impl().data);
}

template class BasicTensor<float>;
template class BasicTensor<double>;

}  // namespace mtsnet
