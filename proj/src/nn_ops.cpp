#include "mtsnet/nn_ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "gemm.hpp"

namespace mtsnet::nn {

using detail::gemm;
using detail::grad_buffer;

std::string to_string(const Extent3& e) {
    return std::to_string(e.t) + "x" + std::to_string(e.h) + "x" + std::to_string(e.w);
}

Extent3 same_padding(const Extent3& kernel) {
    auto pad = [](std::size_t k) { return k % 2 == 1 ? (k - 1) / 2 : std::size_t{0}; };
    return {pad(kernel.t), pad(kernel.h), pad(kernel.w)};
}

std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
    if (stride == 0) throw ShapeError("convolution stride must be >= 1");
    const long long span = static_cast<long long>(in) + 2 * static_cast<long long>(pad) - static_cast<long long>(kernel);
    if (span < 0) {
        throw ShapeError("kernel extent " + std::to_string(kernel) + " exceeds padded input " + std::to_string(in));
    }
    return static_cast<std::size_t>(span) / stride + 1;
}

namespace {

struct ConvGeom {
    std::size_t n, cin, l, h, w;
    std::size_t cout, kt, kh, kw;
    std::size_t st, sh, sw, pt, ph, pw;
    std::size_t lo, ho, wo;

    std::size_t frame() const { return h * w; }
    std::size_t in_sample() const { return cin * l * h * w; }
    std::size_t plane() const { return ho * wo; }
    std::size_t out_sample() const { return cout * lo * ho * wo; }
    std::size_t k() const { return cin * kt * kh * kw; }
    bool pointwise_spatial() const { return kh == 1 && kw == 1 && sh == 1 && sw == 1 && ph == 0 && pw == 0; }

    /// Input frame feeding output frame `out_l` through temporal tap `dt`, or -1.
    long long in_frame(std::size_t out_l, std::size_t dt) const {
        const long long li = static_cast<long long>(out_l * st + dt) - static_cast<long long>(pt);
        return li >= 0 && li < static_cast<long long>(l) ? li : -1;
    }
};

/// Valid output range [lo, hi) along one axis for kernel tap `d`.
void tap_range(std::size_t out, std::size_t in, std::size_t stride, std::size_t pad, std::size_t d,
               std::size_t& lo, std::size_t& hi) {
    // i = o*stride + d - pad must lie in [0, in)
    const long long off = static_cast<long long>(d) - static_cast<long long>(pad);
    long long first = 0;
    if (off < 0) first = (-off + static_cast<long long>(stride) - 1) / static_cast<long long>(stride);
    long long last = (static_cast<long long>(in) - 1 - off);
    last = last < 0 ? -1 : last / static_cast<long long>(stride);
    lo = static_cast<std::size_t>(std::min<long long>(first, static_cast<long long>(out)));
    hi = static_cast<std::size_t>(std::clamp<long long>(last + 1, static_cast<long long>(lo), static_cast<long long>(out)));
}

/// Column matrix [cin*kt*kh*kw, ho*wo] for output frame `out_l` of one sample.
template <typename T>
void im2col(const ConvGeom& g, const T* xs, std::size_t out_l, T* col) {
    const std::size_t plane = g.plane();
    std::size_t row = 0;
    for (std::size_t ci = 0; ci < g.cin; ++ci) {
        for (std::size_t dt = 0; dt < g.kt; ++dt) {
            const long long li = g.in_frame(out_l, dt);
            for (std::size_t dh = 0; dh < g.kh; ++dh) {
                std::size_t h0, h1;
                tap_range(g.ho, g.h, g.sh, g.ph, dh, h0, h1);
                for (std::size_t dw = 0; dw < g.kw; ++dw, ++row) {
                    T* dst = col + row * plane;
                    if (li < 0) {
                        std::fill(dst, dst + plane, T{0});
                        continue;
                    }
                    std::size_t w0, w1;
                    tap_range(g.wo, g.w, g.sw, g.pw, dw, w0, w1);
                    const T* src = xs + (ci * g.l + static_cast<std::size_t>(li)) * g.frame();
                    std::fill(dst, dst + h0 * g.wo, T{0});
                    for (std::size_t oh = h0; oh < h1; ++oh) {
                        T* d = dst + oh * g.wo;
                        const T* s = src + (oh * g.sh + dh - g.ph) * g.w;
                        std::fill(d, d + w0, T{0});
                        if (g.sw == 1) {
                            const T* sp = s + w0 + dw - g.pw;
                            std::copy(sp, sp + (w1 - w0), d + w0);
                        } else {
                            for (std::size_t ow = w0; ow < w1; ++ow) d[ow] = s[ow * g.sw + dw - g.pw];
                        }
                        std::fill(d + w1, d + g.wo, T{0});
                    }
                    std::fill(dst + h1 * g.wo, dst + plane, T{0});
                }
            }
        }
    }
}

/// Scatter-add of a column matrix back onto one input sample.
template <typename T>
void col2im_add(const ConvGeom& g, const T* col, std::size_t out_l, T* xs) {
    const std::size_t plane = g.plane();
    std::size_t row = 0;
    for (std::size_t ci = 0; ci < g.cin; ++ci) {
        for (std::size_t dt = 0; dt < g.kt; ++dt) {
            const long long li = g.in_frame(out_l, dt);
            for (std::size_t dh = 0; dh < g.kh; ++dh) {
                std::size_t h0, h1;
                tap_range(g.ho, g.h, g.sh, g.ph, dh, h0, h1);
                for (std::size_t dw = 0; dw < g.kw; ++dw, ++row) {
                    if (li < 0) continue;
                    std::size_t w0, w1;
                    tap_range(g.wo, g.w, g.sw, g.pw, dw, w0, w1);
                    const T* src = col + row * plane;
                    T* dst = xs + (ci * g.l + static_cast<std::size_t>(li)) * g.frame();
                    for (std::size_t oh = h0; oh < h1; ++oh) {
                        const T* s = src + oh * g.wo;
                        T* d = dst + (oh * g.sh + dh - g.ph) * g.w;
                        for (std::size_t ow = w0; ow < w1; ++ow) d[ow * g.sw + dw - g.pw] += s[ow];
                    }
                }
            }
        }
    }
}

/// Weight slices W[:, :, dt, 0, 0] as contiguous [cout, cin] matrices.
template <typename T>
std::vector<std::vector<T>> temporal_taps(const ConvGeom& g, const T* weight) {
    std::vector<std::vector<T>> taps(g.kt, std::vector<T>(g.cout * g.cin));
    for (std::size_t co = 0; co < g.cout; ++co) {
        for (std::size_t ci = 0; ci < g.cin; ++ci) {
            for (std::size_t dt = 0; dt < g.kt; ++dt) taps[dt][co * g.cin + ci] = weight[(co * g.cin + ci) * g.kt + dt];
        }
    }
    return taps;
}

template <typename T>
void conv_forward(const ConvGeom& g, const T* x, const T* weight, const T* bias, T* y) {
    const std::size_t plane = g.plane();
    const std::size_t ldy = g.lo * plane;
    if (g.pointwise_spatial()) {
        const auto taps = temporal_taps(g, weight);
        for (std::size_t n = 0; n < g.n; ++n) {
            const T* xs = x + n * g.in_sample();
            for (std::size_t ol = 0; ol < g.lo; ++ol) {
                T* yf = y + n * g.out_sample() + ol * plane;
                bool first = true;
                for (std::size_t dt = 0; dt < g.kt; ++dt) {
                    const long long li = g.in_frame(ol, dt);
                    if (li < 0) continue;
                    gemm<T>(false, false, g.cout, plane, g.cin, T{1}, taps[dt].data(), g.cin,
                            xs + static_cast<std::size_t>(li) * g.frame(), g.l * g.frame(), first ? T{0} : T{1}, yf, ldy);
                    first = false;
                }
                if (first) {
                    for (std::size_t co = 0; co < g.cout; ++co) std::fill(yf + co * ldy, yf + co * ldy + plane, T{0});
                }
            }
        }
    } else {
        std::vector<T> col(g.k() * plane);
        for (std::size_t n = 0; n < g.n; ++n) {
            const T* xs = x + n * g.in_sample();
            for (std::size_t ol = 0; ol < g.lo; ++ol) {
                im2col(g, xs, ol, col.data());
                gemm<T>(false, false, g.cout, plane, g.k(), T{1}, weight, g.k(), col.data(), plane, T{0},
                        y + n * g.out_sample() + ol * plane, ldy);
            }
        }
    }
    if (bias) {
        for (std::size_t n = 0; n < g.n; ++n) {
            for (std::size_t co = 0; co < g.cout; ++co) {
                T* p = y + n * g.out_sample() + co * ldy;
                for (std::size_t i = 0; i < ldy; ++i) p[i] += bias[co];
            }
        }
    }
}

template <typename T>
void conv_backward(const ConvGeom& g, const T* x, const T* weight, const T* gy, T* gx, T* gw, T* gb) {
    const std::size_t plane = g.plane();
    const std::size_t ldy = g.lo * plane;
    if (gb) {
        for (std::size_t n = 0; n < g.n; ++n) {
            for (std::size_t co = 0; co < g.cout; ++co) {
                const T* p = gy + n * g.out_sample() + co * ldy;
                T acc{0};
                for (std::size_t i = 0; i < ldy; ++i) acc += p[i];
                gb[co] += acc;
            }
        }
    }
    if (g.pointwise_spatial()) {
        const auto taps = temporal_taps(g, weight);
        std::vector<std::vector<T>> gtaps(g.kt, std::vector<T>(gw ? g.cout * g.cin : 0, T{0}));
        for (std::size_t n = 0; n < g.n; ++n) {
            const T* xs = x + n * g.in_sample();
            for (std::size_t ol = 0; ol < g.lo; ++ol) {
                const T* gyf = gy + n * g.out_sample() + ol * plane;
                for (std::size_t dt = 0; dt < g.kt; ++dt) {
                    const long long li = g.in_frame(ol, dt);
                    if (li < 0) continue;
                    const std::size_t off = static_cast<std::size_t>(li) * g.frame();
                    if (gx) {
                        gemm<T>(true, false, g.cin, plane, g.cout, T{1}, taps[dt].data(), g.cin, gyf, ldy, T{1},
                                gx + n * g.in_sample() + off, g.l * g.frame());
                    }
                    if (gw) {
                        gemm<T>(false, true, g.cout, g.cin, plane, T{1}, gyf, ldy, xs + off, g.l * g.frame(), T{1},
                                gtaps[dt].data(), g.cin);
                    }
                }
            }
        }
        if (gw) {
            for (std::size_t co = 0; co < g.cout; ++co) {
                for (std::size_t ci = 0; ci < g.cin; ++ci) {
                    for (std::size_t dt = 0; dt < g.kt; ++dt) gw[(co * g.cin + ci) * g.kt + dt] += gtaps[dt][co * g.cin + ci];
                }
            }
        }
        return;
    }
    std::vector<T> col(g.k() * plane);
    for (std::size_t n = 0; n < g.n; ++n) {
        const T* xs = x + n * g.in_sample();
        for (std::size_t ol = 0; ol < g.lo; ++ol) {
            const T* gyf = gy + n * g.out_sample() + ol * plane;
            if (gw) {
                im2col(g, xs, ol, col.data());
                gemm<T>(false, true, g.cout, g.k(), plane, T{1}, gyf, ldy, col.data(), plane, T{1}, gw, g.k());
            }
            if (gx) {
                gemm<T>(true, false, g.k(), plane, g.cout, T{1}, weight, g.k(), gyf, ldy, T{0}, col.data(), plane);
                col2im_add(g, col.data(), ol, gx + n * g.in_sample());
            }
        }
    }
}

}  // namespace

template <typename T>
BasicTensor<T> conv3d(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                      const ConvOptions& options) {
    if (x.rank() != 5) throw ShapeError("conv3d input must be [N,C,L,H,W], got " + shape_str(x.shape()));
    if (weight.rank() != 5) throw ShapeError("conv3d weight must be [C',C,kt,kh,kw], got " + shape_str(weight.shape()));
    const Shape& xs = x.shape();
    const Shape& ws = weight.shape();
    if (ws[1] != xs[1]) {
        throw ShapeError("conv3d channel mismatch: input has " + std::to_string(xs[1]) + ", weight expects " +
                         std::to_string(ws[1]));
    }
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != ws[0])) throw ShapeError("conv3d bias must be [C']");

    ConvGeom g{};
    g.n = xs[0];
    g.cin = xs[1];
    g.l = xs[2];
    g.h = xs[3];
    g.w = xs[4];
    g.cout = ws[0];
    g.kt = ws[2];
    g.kh = ws[3];
    g.kw = ws[4];
    g.st = options.stride.t;
    g.sh = options.stride.h;
    g.sw = options.stride.w;
    g.pt = options.padding.t;
    g.ph = options.padding.h;
    g.pw = options.padding.w;
    g.lo = conv_out_extent(g.l, g.kt, g.st, g.pt);
    g.ho = conv_out_extent(g.h, g.kh, g.sh, g.ph);
    g.wo = conv_out_extent(g.w, g.kw, g.sw, g.pw);

    BasicTensor<T> out(Shape{g.n, g.cout, g.lo, g.ho, g.wo});
    conv_forward(g, x.raw(), weight.raw(), bias.defined() ? bias.raw() : nullptr, out.mutable_data().data());

    if (detail::should_record<T>({&x, &weight, &bias})) {
        out.set_requires_grad(true);
        auto bs = bias.defined() ? bias.storage() : nullptr;
        Tape::current().record([g, xs = x.storage(), wst = weight.storage(), bs, os = out.storage()] {
            if (os->grad.empty()) return;
            T* gx = xs->requires_grad ? grad_buffer<T>(*xs) : nullptr;
            T* gw = wst->requires_grad ? grad_buffer<T>(*wst) : nullptr;
            T* gb = bs && bs->requires_grad ? grad_buffer<T>(*bs) : nullptr;
            conv_backward(g, xs->data.data(), wst->data.data(), os->grad.data(), gx, gw, gb);
        });
    }
    return out;
}

template <typename T>
BatchNormState<T> BatchNormState<T>::make(std::size_t channels) {
    BatchNormState s;
    s.gamma = BasicTensor<T>::ones({channels});
    s.beta = BasicTensor<T>::zeros({channels});
    s.running_mean = BasicTensor<T>::zeros({channels});
    s.running_var = BasicTensor<T>::ones({channels});
    return s;
}

template <typename T>
BasicTensor<T> batchnorm3d(const BasicTensor<T>& x, BatchNormState<T>& state, bool training) {
    if (x.rank() != 5) throw ShapeError("batchnorm3d input must be [N,C,L,H,W], got " + shape_str(x.shape()));
    const std::size_t n = x.dim(0);
    const std::size_t c = x.dim(1);
    const std::size_t s = x.dim(2) * x.dim(3) * x.dim(4);
    if (state.gamma.numel() != c || state.beta.numel() != c || state.running_mean.numel() != c ||
        state.running_var.numel() != c) {
        throw ShapeError("batchnorm3d channel mismatch: input has " + std::to_string(c) + " channels");
    }
    const std::size_t count = n * s;
    if (training && count < 2) throw ShapeError("batchnorm3d training needs more than one value per channel");

    const T* px = x.raw();
    const T* gamma = state.gamma.raw();
    const T* beta = state.beta.raw();
    std::vector<T> mean(c), invstd(c);
    if (training) {
        auto rm = state.running_mean.mutable_data();
        auto rv = state.running_var.mutable_data();
        for (std::size_t ch = 0; ch < c; ++ch) {
            double acc = 0.0;
            for (std::size_t b = 0; b < n; ++b) {
                const T* p = px + (b * c + ch) * s;
                for (std::size_t i = 0; i < s; ++i) acc += p[i];
            }
            const double mu = acc / static_cast<double>(count);
            double sq = 0.0;
            for (std::size_t b = 0; b < n; ++b) {
                const T* p = px + (b * c + ch) * s;
                for (std::size_t i = 0; i < s; ++i) {
                    const double d = p[i] - mu;
                    sq += d * d;
                }
            }
            const double var = sq / static_cast<double>(count);
            mean[ch] = static_cast<T>(mu);
            invstd[ch] = static_cast<T>(1.0 / std::sqrt(var + state.eps));
            const double unbiased = sq / static_cast<double>(count - 1);
            rm[ch] = static_cast<T>((1.0 - state.momentum) * rm[ch] + state.momentum * mu);
            rv[ch] = static_cast<T>((1.0 - state.momentum) * rv[ch] + state.momentum * unbiased);
        }
    } else {
        for (std::size_t ch = 0; ch < c; ++ch) {
            mean[ch] = state.running_mean.data()[ch];
            invstd[ch] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(state.running_var.data()[ch]) + state.eps));
        }
    }

    BasicTensor<T> out(x.shape());
    T* py = out.mutable_data().data();
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            const T* p = px + (b * c + ch) * s;
            T* q = py + (b * c + ch) * s;
            const T a = gamma[ch] * invstd[ch];
            const T k = beta[ch] - mean[ch] * a;
            for (std::size_t i = 0; i < s; ++i) q[i] = p[i] * a + k;
        }
    }

    if (detail::should_record<T>({&x, &state.gamma, &state.beta})) {
        out.set_requires_grad(true);
        Tape::current().record([training, n, c, s, mean = std::move(mean), invstd = std::move(invstd), xs = x.storage(),
                                gs = state.gamma.storage(), bs = state.beta.storage(), os = out.storage()] {
            if (os->grad.empty()) return;
            const T* gy = os->grad.data();
            const T* px = xs->data.data();
            T* gx = xs->requires_grad ? grad_buffer<T>(*xs) : nullptr;
            T* gg = gs->requires_grad ? grad_buffer<T>(*gs) : nullptr;
            T* gbeta = bs->requires_grad ? grad_buffer<T>(*bs) : nullptr;
            const double count = static_cast<double>(n * s);
            for (std::size_t ch = 0; ch < c; ++ch) {
                double sum_dy = 0.0;
                double sum_dy_xhat = 0.0;
                for (std::size_t b = 0; b < n; ++b) {
                    const T* p = px + (b * c + ch) * s;
                    const T* d = gy + (b * c + ch) * s;
                    for (std::size_t i = 0; i < s; ++i) {
                        sum_dy += d[i];
                        sum_dy_xhat += static_cast<double>(d[i]) * (p[i] - mean[ch]) * invstd[ch];
                    }
                }
                if (gg) gg[ch] += static_cast<T>(sum_dy_xhat);
                if (gbeta) gbeta[ch] += static_cast<T>(sum_dy);
                if (!gx) continue;
                const T g = xs->requires_grad ? gs->data[ch] * invstd[ch] : T{0};
                const T mdy = training ? static_cast<T>(sum_dy / count) : T{0};
                const T mdyx = training ? static_cast<T>(sum_dy_xhat / count) : T{0};
                for (std::size_t b = 0; b < n; ++b) {
                    const T* p = px + (b * c + ch) * s;
                    const T* d = gy + (b * c + ch) * s;
                    T* q = gx + (b * c + ch) * s;
                    for (std::size_t i = 0; i < s; ++i) {
                        const T xhat = (p[i] - mean[ch]) * invstd[ch];
                        q[i] += g * (d[i] - mdy - xhat * mdyx);
                    }
                }
            }
        });
    }
    return out;
}

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& x, int axis) {
    const int rank = static_cast<int>(x.rank());
    const int ax = axis < 0 ? axis + rank : axis;
    if (ax < 0 || ax >= rank) throw ShapeError("softmax axis " + std::to_string(axis) + " invalid for " + shape_str(x.shape()));
    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < ax; ++i) outer *= x.shape()[static_cast<std::size_t>(i)];
    for (int i = ax + 1; i < rank; ++i) inner *= x.shape()[static_cast<std::size_t>(i)];
    const std::size_t len = x.shape()[static_cast<std::size_t>(ax)];

    BasicTensor<T> out(x.shape());
    const T* px = x.raw();
    T* py = out.mutable_data().data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, px[base + j * inner]);
            T total{0};
            for (std::size_t j = 0; j < len; ++j) {
                const T e = std::exp(px[base + j * inner] - mx);
                py[base + j * inner] = e;
                total += e;
            }
            const T inv = T{1} / total;
            for (std::size_t j = 0; j < len; ++j) py[base + j * inner] *= inv;
        }
    }

    if (detail::should_record<T>({&x})) {
        out.set_requires_grad(true);
        Tape::current().record([outer, inner, len, xs = x.storage(), os = out.storage()] {
            if (os->grad.empty() || !xs->requires_grad) return;
            T* gx = grad_buffer<T>(*xs);
            const T* y = os->data.data();
            const T* gy = os->grad.data();
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t in = 0; in < inner; ++in) {
                    const std::size_t base = o * len * inner + in;
                    T dot{0};
                    for (std::size_t j = 0; j < len; ++j) dot += gy[base + j * inner] * y[base + j * inner];
                    for (std::size_t j = 0; j < len; ++j) {
                        const std::size_t i = base + j * inner;
                        gx[i] += y[i] * (gy[i] - dot);
                    }
                }
            }
        });
    }
    return out;
}

template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& x) {
    if (x.rank() != 5) throw ShapeError("global_avg_pool input must be [N,C,L,H,W], got " + shape_str(x.shape()));
    return reduce(ReduceOp::mean, x, {2, 3, 4});
}

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias) {
    if (x.rank() != 2 || weight.rank() != 2 || x.dim(1) != weight.dim(0)) {
        throw ShapeError("linear shape mismatch: " + shape_str(x.shape()) + " x " + shape_str(weight.shape()));
    }
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != weight.dim(1))) throw ShapeError("linear bias must be [O]");
    BasicTensor<T> y = matmul(x, weight);
    return bias.defined() ? add(y, bias) : y;
}

#define MTSNET_INSTANTIATE_NN(T)                                                                                   \
    template BasicTensor<T> conv3d<T>(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,          \
                                      const ConvOptions&);                                                         \
    template struct BatchNormState<T>;                                                                             \
    template BasicTensor<T> batchnorm3d<T>(const BasicTensor<T>&, BatchNormState<T>&, bool);                       \
    template BasicTensor<T> softmax<T>(const BasicTensor<T>&, int);                                                \
    template BasicTensor<T> global_avg_pool<T>(const BasicTensor<T>&);                                             \
    template BasicTensor<T> linear<T>(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&);

MTSNET_INSTANTIATE_NN(float)
MTSNET_INSTANTIATE_NN(double)

}  // namespace mtsnet::nn
