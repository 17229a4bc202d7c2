#pragma once

// Direct loop implementations used as independent references in tests.

#include <cmath>
#include <vector>

#include "mtsnet/nn_ops.hpp"

namespace oracle {

using mtsnet::Tensor64;

inline Tensor64 conv(const Tensor64& x, const Tensor64& w, const Tensor64& b, const mtsnet::nn::ConvOptions& o) {
    using mtsnet::nn::conv_out_extent;
    const auto& xs = x.shape();
    const auto& ws = w.shape();
    const std::size_t lo = conv_out_extent(xs[2], ws[2], o.stride.t, o.padding.t);
    const std::size_t ho = conv_out_extent(xs[3], ws[3], o.stride.h, o.padding.h);
    const std::size_t wo = conv_out_extent(xs[4], ws[4], o.stride.w, o.padding.w);
    Tensor64 y({xs[0], ws[0], lo, ho, wo});
    auto out = y.mutable_data();
    std::size_t idx = 0;
    for (std::size_t n = 0; n < xs[0]; ++n)
        for (std::size_t co = 0; co < ws[0]; ++co)
            for (std::size_t l = 0; l < lo; ++l)
                for (std::size_t h = 0; h < ho; ++h)
                    for (std::size_t ww = 0; ww < wo; ++ww, ++idx) {
                        double acc = b.defined() ? b.at({co}) : 0.0;
                        for (std::size_t ci = 0; ci < xs[1]; ++ci)
                            for (std::size_t a = 0; a < ws[2]; ++a)
                                for (std::size_t c = 0; c < ws[3]; ++c)
                                    for (std::size_t d = 0; d < ws[4]; ++d) {
                                        const long li = long(l * o.stride.t + a) - long(o.padding.t);
                                        const long hi = long(h * o.stride.h + c) - long(o.padding.h);
                                        const long wi = long(ww * o.stride.w + d) - long(o.padding.w);
                                        if (li < 0 || hi < 0 || wi < 0 || li >= long(xs[2]) || hi >= long(xs[3]) ||
                                            wi >= long(xs[4]))
                                            continue;
                                        acc += x.at({n, ci, std::size_t(li), std::size_t(hi), std::size_t(wi)}) *
                                               w.at({co, ci, a, c, d});
                                    }
                        out[idx] = acc;
                    }
    return y;
}

/// Stride-1 conv with (k-1)/2 padding and no bias.
inline Tensor64 same_conv(const Tensor64& x, const Tensor64& w) {
    const mtsnet::nn::Extent3 k{w.dim(2), w.dim(3), w.dim(4)};
    return conv(x, w, Tensor64(), {{1, 1, 1}, mtsnet::nn::same_padding(k)});
}

/// E[c,l,h,w] = eh[c,0,h,0] + ew[c,0,0,w] + ef[c,l,0,0].
inline Tensor64 position_sum(const Tensor64& eh, const Tensor64& ew, const Tensor64& ef) {
    const std::size_t c = eh.dim(0), l = ef.dim(1), h = eh.dim(2), w = ew.dim(3);
    Tensor64 e({c, l, h, w});
    auto out = e.mutable_data();
    std::size_t i = 0;
    for (std::size_t a = 0; a < c; ++a)
        for (std::size_t f = 0; f < l; ++f)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x) out[i++] = eh.at({a, 0, y, 0}) + ew.at({a, 0, 0, x}) + ef.at({a, f, 0, 0});
    return e;
}

/// Per-frame multi-head attention over H*W sites with an optional key-side
/// position tensor m and output-side residual r (both [C,L,H,W] or undefined).
inline Tensor64 frame_attention(const Tensor64& q, const Tensor64& k, const Tensor64& v, std::size_t heads,
                                const Tensor64& m, const Tensor64& r) {
    const std::size_t n = q.dim(0), c = q.dim(1), l = q.dim(2), h = q.dim(3), w = q.dim(4), p = h * w;
    const std::size_t d = c / heads;
    Tensor64 y(q.shape());
    auto out = y.mutable_data();
    auto flat = [&](std::size_t b, std::size_t ch, std::size_t f, std::size_t site) {
        return (((b * c + ch) * l + f) * p) + site;
    };
    const auto qv = q.data(), kv = k.data(), vv = v.data();
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t hd = 0; hd < heads; ++hd)
            for (std::size_t f = 0; f < l; ++f)
                for (std::size_t i = 0; i < p; ++i) {
                    std::vector<double> e(p);
                    double mx = -1e300;
                    for (std::size_t j = 0; j < p; ++j) {
                        double s = 0;
                        for (std::size_t a = hd * d; a < (hd + 1) * d; ++a) {
                            const double key = kv[flat(b, a, f, j)] + (m.defined() ? m.data()[(a * l + f) * p + j] : 0.0);
                            s += qv[flat(b, a, f, i)] * key;
                        }
                        e[j] = s / std::sqrt(double(d));
                        mx = std::max(mx, e[j]);
                    }
                    double z = 0;
                    for (auto& s : e) z += (s = std::exp(s - mx));
                    for (std::size_t a = hd * d; a < (hd + 1) * d; ++a) {
                        double acc = 0;
                        for (std::size_t j = 0; j < p; ++j) acc += e[j] / z * vv[flat(b, a, f, j)];
                        out[flat(b, a, f, i)] = acc + (r.defined() ? r.data()[(a * l + f) * p + i] : 0.0);
                    }
                }
    return y;
}

inline double max_abs_diff(const Tensor64& a, const Tensor64& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

}  // namespace oracle
