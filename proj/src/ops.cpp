#include "mtsnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "gemm.hpp"
#include "strided.hpp"

namespace mtsnet {

using detail::broadcast_strides;
using detail::grad_buffer;
using detail::strided_walk;

Shape broadcast_shapes(const Shape& a, const Shape& b) {
    const std::size_t rank = std::max(a.size(), b.size());
    Shape out(rank, 1);
    for (std::size_t i = 0; i < rank; ++i) {
        const std::size_t ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
        const std::size_t eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
        if (ea != eb && ea != 1 && eb != 1) {
            throw ShapeError("shapes " + shape_str(a) + " and " + shape_str(b) + " are not broadcastable");
        }
        out[i] = std::max(ea, eb);
    }
    return out;
}

namespace {

template <typename T>
T sigmoid_scalar(T x) {
    if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
    const T e = std::exp(x);
    return e / (T{1} + e);
}

template <typename T>
BasicTensor<T> unary(ElementwiseOp op, const BasicTensor<T>& a) {
    BasicTensor<T> out(a.shape());
    const T* x = a.raw();
    T* y = out.mutable_data().data();
    const std::size_t n = a.numel();
    if (op == ElementwiseOp::relu) {
        for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > T{0} ? x[i] : T{0};
        if (const double margin = detail::kink_margin(); margin > 0.0) {
            std::size_t near = 0;
            for (std::size_t i = 0; i < n; ++i) near += std::abs(static_cast<double>(x[i])) < margin;
            detail::note_kinks(near);
        }
    } else {
        for (std::size_t i = 0; i < n; ++i) y[i] = sigmoid_scalar(x[i]);
    }
    if (detail::should_record<T>({&a})) {
        out.set_requires_grad(true);
        Tape::current().record([op, as = a.storage(), os = out.storage()] {
            if (os->grad.empty() || !as->requires_grad) return;
            T* ga = grad_buffer<T>(*as);
            const T* g = os->grad.data();
            const std::size_t n = os->data.size();
            if (op == ElementwiseOp::relu) {
                for (std::size_t i = 0; i < n; ++i) {
                    if (as->data[i] > T{0}) ga[i] += g[i];
                }
            } else {
                for (std::size_t i = 0; i < n; ++i) {
                    const T s = os->data[i];
                    ga[i] += g[i] * s * (T{1} - s);
                }
            }
        });
    }
    return out;
}

template <typename T>
BasicTensor<T> binary(ElementwiseOp op, const BasicTensor<T>& a, const BasicTensor<T>& b) {
    const Shape out_shape = broadcast_shapes(a.shape(), b.shape());
    BasicTensor<T> out(out_shape);
    const std::array<std::vector<std::size_t>, 3> strides{contiguous_strides(out_shape),
                                                          broadcast_strides(a.shape(), out_shape),
                                                          broadcast_strides(b.shape(), out_shape)};
    const T* pa = a.raw();
    const T* pb = b.raw();
    T* py = out.mutable_data().data();
    strided_walk<3>(out_shape, strides, [&](const auto& off, std::size_t n, const auto& step) {
        T* y = py + off[0];
        const T* x0 = pa + off[1];
        const T* x1 = pb + off[2];
        const std::size_t sa = step[1];
        const std::size_t sb = step[2];
        switch (op) {
            case ElementwiseOp::add:
                for (std::size_t i = 0; i < n; ++i) y[i] = x0[i * sa] + x1[i * sb];
                break;
            case ElementwiseOp::sub:
                for (std::size_t i = 0; i < n; ++i) y[i] = x0[i * sa] - x1[i * sb];
                break;
            default:
                for (std::size_t i = 0; i < n; ++i) y[i] = x0[i * sa] * x1[i * sb];
                break;
        }
    });

    if (detail::should_record<T>({&a, &b})) {
        out.set_requires_grad(true);
        Tape::current().record([op, strides, out_shape, as = a.storage(), bs = b.storage(), os = out.storage()] {
            if (os->grad.empty()) return;
            const T* g = os->grad.data();
            T* ga = as->requires_grad ? grad_buffer<T>(*as) : nullptr;
            T* gb = bs->requires_grad ? grad_buffer<T>(*bs) : nullptr;
            const T* va = as->data.data();
            const T* vb = bs->data.data();
            strided_walk<3>(out_shape, strides, [&](const auto& off, std::size_t n, const auto& step) {
                const T* gy = g + off[0];
                const std::size_t sa = step[1];
                const std::size_t sb = step[2];
                if (ga) {
                    T* d = ga + off[1];
                    if (op == ElementwiseOp::mul) {
                        const T* o = vb + off[2];
                        for (std::size_t i = 0; i < n; ++i) d[i * sa] += gy[i] * o[i * sb];
                    } else {
                        for (std::size_t i = 0; i < n; ++i) d[i * sa] += gy[i];
                    }
                }
                if (gb) {
                    T* d = gb + off[2];
                    if (op == ElementwiseOp::mul) {
                        const T* o = va + off[1];
                        for (std::size_t i = 0; i < n; ++i) d[i * sb] += gy[i] * o[i * sa];
                    } else if (op == ElementwiseOp::sub) {
                        for (std::size_t i = 0; i < n; ++i) d[i * sb] -= gy[i];
                    } else {
                        for (std::size_t i = 0; i < n; ++i) d[i * sb] += gy[i];
                    }
                }
            });
        });
    }
    return out;
}

}  // namespace

template <typename T>
BasicTensor<T> elementwise(ElementwiseOp op, const BasicTensor<T>& a, const BasicTensor<T>& b) {
    switch (op) {
        case ElementwiseOp::relu:
        case ElementwiseOp::sigmoid:
            return unary(op, a);
        default:
            if (!b.defined()) throw ContractError("binary elementwise op needs two operands");
            return binary(op, a, b);
    }
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
    BasicTensor<T> out(a.shape());
    const T* x = a.raw();
    T* y = out.mutable_data().data();
    for (std::size_t i = 0; i < a.numel(); ++i) y[i] = x[i] * factor;
    if (detail::should_record<T>({&a})) {
        out.set_requires_grad(true);
        Tape::current().record([factor, as = a.storage(), os = out.storage()] {
            if (os->grad.empty() || !as->requires_grad) return;
            T* ga = grad_buffer<T>(*as);
            for (std::size_t i = 0; i < os->grad.size(); ++i) ga[i] += os->grad[i] * factor;
        });
    }
    return out;
}

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    if (a.rank() < 2 || b.rank() < 2) throw ShapeError("matmul needs operands of rank >= 2");
    const std::size_t m = a.dim(-2);
    const std::size_t k = a.dim(-1);
    const std::size_t n = b.dim(-1);
    if (b.dim(-2) != k) {
        throw ShapeError("matmul inner extents differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    const Shape a_batch(a.shape().begin(), a.shape().end() - 2);
    const Shape b_batch(b.shape().begin(), b.shape().end() - 2);
    Shape batch = a_batch.empty() && b_batch.empty() ? Shape{} : broadcast_shapes(a_batch.empty() ? Shape{1} : a_batch,
                                                                                b_batch.empty() ? Shape{1} : b_batch);

    // Matrix offsets of every batch entry.
    struct Triplet {
        std::size_t a, b, y;
    };
    std::vector<Triplet> offsets;
    if (batch.empty()) {
        offsets.push_back({0, 0, 0});
    } else {
        const std::array<std::vector<std::size_t>, 2> st{broadcast_strides(a_batch.empty() ? Shape{1} : a_batch, batch),
                                                         broadcast_strides(b_batch.empty() ? Shape{1} : b_batch, batch)};
        strided_walk<2>(batch, st, [&](const auto& off, std::size_t cnt, const auto& step) {
            for (std::size_t i = 0; i < cnt; ++i) {
                offsets.push_back({(off[0] + i * step[0]) * m * k, (off[1] + i * step[1]) * k * n, 0});
            }
        });
        for (std::size_t i = 0; i < offsets.size(); ++i) offsets[i].y = i * m * n;
    }

    Shape out_shape = batch;
    out_shape.push_back(m);
    out_shape.push_back(n);
    BasicTensor<T> out(out_shape);
    T* py = out.mutable_data().data();
    for (const auto& o : offsets) {
        detail::gemm<T>(false, false, m, n, k, T{1}, a.raw() + o.a, k, b.raw() + o.b, n, T{0}, py + o.y, n);
    }

    if (detail::should_record<T>({&a, &b})) {
        out.set_requires_grad(true);
        Tape::current().record([m, n, k, offsets, as = a.storage(), bs = b.storage(), os = out.storage()] {
            if (os->grad.empty()) return;
            T* ga = as->requires_grad ? grad_buffer<T>(*as) : nullptr;
            T* gb = bs->requires_grad ? grad_buffer<T>(*bs) : nullptr;
            const T* g = os->grad.data();
            for (const auto& o : offsets) {
                // dA = dY * B^T, dB = A^T * dY
                if (ga) detail::gemm<T>(false, true, m, k, n, T{1}, g + o.y, n, bs->data.data() + o.b, n, T{1}, ga + o.a, k);
                if (gb) detail::gemm<T>(true, false, k, n, m, T{1}, as->data.data() + o.a, k, g + o.y, n, T{1}, gb + o.b, n);
            }
        });
    }
    return out;
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& t, Shape new_shape) {
    if (shape_numel(new_shape) != t.numel() || new_shape.empty()) {
        throw ShapeError("cannot reshape " + shape_str(t.shape()) + " to " + shape_str(new_shape));
    }
    std::vector<T> values(t.data().begin(), t.data().end());
    BasicTensor<T> out(std::move(new_shape), std::move(values));
    if (detail::should_record<T>({&t})) {
        out.set_requires_grad(true);
        Tape::current().record([ts = t.storage(), os = out.storage()] {
            if (os->grad.empty() || !ts->requires_grad) return;
            T* gt = grad_buffer<T>(*ts);
            for (std::size_t i = 0; i < os->grad.size(); ++i) gt[i] += os->grad[i];
        });
    }
    return out;
}

template <typename T>
BasicTensor<T> permute(const BasicTensor<T>& t, const std::vector<std::size_t>& order) {
    const std::size_t rank = t.rank();
    if (order.size() != rank) throw ShapeError("permutation length does not match rank");
    std::vector<bool> seen(rank, false);
    for (std::size_t ax : order) {
        if (ax >= rank || seen[ax]) throw ShapeError("invalid axis permutation");
        seen[ax] = true;
    }
    const auto in_strides = contiguous_strides(t.shape());
    Shape out_shape(rank);
    std::vector<std::size_t> src_strides(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        out_shape[i] = t.shape()[order[i]];
        src_strides[i] = in_strides[order[i]];
    }
    BasicTensor<T> out(out_shape);
    const std::array<std::vector<std::size_t>, 2> st{contiguous_strides(out_shape), src_strides};
    const T* x = t.raw();
    T* y = out.mutable_data().data();
    strided_walk<2>(out_shape, st, [&](const auto& off, std::size_t n, const auto& step) {
        for (std::size_t i = 0; i < n; ++i) y[off[0] + i * step[0]] = x[off[1] + i * step[1]];
    });
    if (detail::should_record<T>({&t})) {
        out.set_requires_grad(true);
        Tape::current().record([st, out_shape, ts = t.storage(), os = out.storage()] {
            if (os->grad.empty() || !ts->requires_grad) return;
            T* gt = grad_buffer<T>(*ts);
            const T* g = os->grad.data();
            strided_walk<2>(out_shape, st, [&](const auto& off, std::size_t n, const auto& step) {
                for (std::size_t i = 0; i < n; ++i) gt[off[1] + i * step[1]] += g[off[0] + i * step[0]];
            });
        });
    }
    return out;
}

template <typename T>
BasicTensor<T> reduce(ReduceOp op, const BasicTensor<T>& t, std::vector<int> axes, bool keepdim) {
    const std::size_t rank = t.rank();
    std::vector<bool> reduced(rank, false);
    for (int ax : axes) {
        const int a = ax < 0 ? ax + static_cast<int>(rank) : ax;
        if (a < 0 || a >= static_cast<int>(rank)) {
            throw ShapeError("reduction axis " + std::to_string(ax) + " invalid for " + shape_str(t.shape()));
        }
        reduced[static_cast<std::size_t>(a)] = true;
    }
    Shape kept(rank);
    Shape out_shape;
    std::size_t count = 1;
    for (std::size_t i = 0; i < rank; ++i) {
        kept[i] = reduced[i] ? 1 : t.shape()[i];
        if (reduced[i]) count *= t.shape()[i];
        if (!reduced[i] || keepdim) out_shape.push_back(kept[i]);
    }
    if (out_shape.empty()) out_shape.push_back(1);

    const std::array<std::vector<std::size_t>, 2> st{contiguous_strides(t.shape()), broadcast_strides(kept, t.shape())};
    BasicTensor<T> out(out_shape, op == ReduceOp::max ? -std::numeric_limits<T>::infinity() : T{0});
    const T* x = t.raw();
    T* y = out.mutable_data().data();
    std::vector<std::size_t> argmax;
    if (op == ReduceOp::max) {
        argmax.assign(out.numel(), 0);
        // Row-major traversal plus a strict comparison keeps the first maximum.
        strided_walk<2>(t.shape(), st, [&](const auto& off, std::size_t n, const auto& step) {
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t src = off[0] + i * step[0];
                const std::size_t dst = off[1] + i * step[1];
                if (x[src] > y[dst]) {
                    y[dst] = x[src];
                    argmax[dst] = src;
                }
            }
        });
    } else {
        strided_walk<2>(t.shape(), st, [&](const auto& off, std::size_t n, const auto& step) {
            for (std::size_t i = 0; i < n; ++i) y[off[1] + i * step[1]] += x[off[0] + i * step[0]];
        });
        if (op == ReduceOp::mean) {
            const T inv = T{1} / static_cast<T>(count);
            for (T& v : out.mutable_data()) v *= inv;
        }
    }

    if (detail::should_record<T>({&t})) {
        out.set_requires_grad(true);
        const Shape in_shape = t.shape();
        Tape::current().record([op, st, in_shape, count, argmax = std::move(argmax), ts = t.storage(), os = out.storage()] {
            if (os->grad.empty() || !ts->requires_grad) return;
            T* gt = grad_buffer<T>(*ts);
            const T* g = os->grad.data();
            if (op == ReduceOp::max) {
                for (std::size_t o = 0; o < argmax.size(); ++o) gt[argmax[o]] += g[o];
                return;
            }
            const T factor = op == ReduceOp::mean ? T{1} / static_cast<T>(count) : T{1};
            strided_walk<2>(in_shape, st, [&](const auto& off, std::size_t n, const auto& step) {
                for (std::size_t i = 0; i < n; ++i) gt[off[0] + i * step[0]] += g[off[1] + i * step[1]] * factor;
            });
        });
    }
    return out;
}

#define MTSNET_INSTANTIATE_OPS(T)                                                                            \
    template BasicTensor<T> elementwise<T>(ElementwiseOp, const BasicTensor<T>&, const BasicTensor<T>&);     \
    template BasicTensor<T> scale<T>(const BasicTensor<T>&, T);                                              \
    template BasicTensor<T> matmul<T>(const BasicTensor<T>&, const BasicTensor<T>&);                         \
    template BasicTensor<T> reshape<T>(const BasicTensor<T>&, Shape);                                        \
    template BasicTensor<T> permute<T>(const BasicTensor<T>&, const std::vector<std::size_t>&);              \
    template BasicTensor<T> reduce<T>(ReduceOp, const BasicTensor<T>&, std::vector<int>, bool);

MTSNET_INSTANTIATE_OPS(float)
MTSNET_INSTANTIATE_OPS(double)

}  // namespace mtsnet
