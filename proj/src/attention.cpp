#include "mtsnet/attention.hpp"

#include <cmath>

namespace mtsnet::attn {

namespace {

constexpr double kEmbeddingStd = 0.02;

template <typename T>
BasicTensor<T> same_conv(const BasicTensor<T>& x, const BasicTensor<T>& w) {
    const Extent3 k{w.dim(2), w.dim(3), w.dim(4)};
    return nn::conv3d(x, w, BasicTensor<T>(), nn::ConvOptions{{1, 1, 1}, nn::same_padding(k)});
}

template <typename T>
BasicTensor<T> gate(const BasicTensor<T>& x, const GateWeights<T>& g) {
    return sigmoid(same_conv(relu(same_conv(x, g.first)), g.second));
}

void check_rank5(const Shape& s, const char* what) {
    if (s.size() != 5) throw ShapeError(std::string(what) + " expects [N,C,L,H,W], got " + shape_str(s));
}

void check_heads(std::size_t channels, std::size_t n_head) {
    if (n_head == 0 || channels % n_head != 0) {
        throw ConfigError("n_head " + std::to_string(n_head) + " must divide channel count " +
                          std::to_string(channels));
    }
}

}  // namespace

std::string to_string(AttentionKind kind) {
    switch (kind) {
        case AttentionKind::none: return "none";
        case AttentionKind::dep_mhsa: return "dep_mhsa";
        case AttentionKind::mhsa3d: return "mhsa3d";
        case AttentionKind::mhsa2p1d: return "mhsa2p1d";
        case AttentionKind::vanilla_channel: return "vanilla_channel";
        case AttentionKind::vanilla_2p1d: return "vanilla_2p1d";
    }
    return "?";
}

std::string to_string(Variant variant) { return std::string(1, static_cast<char>('A' + static_cast<int>(variant))); }

AttentionKind parse_attention_kind(const std::string& name) {
    for (auto k : {AttentionKind::none, AttentionKind::dep_mhsa, AttentionKind::mhsa3d, AttentionKind::mhsa2p1d,
                   AttentionKind::vanilla_channel, AttentionKind::vanilla_2p1d}) {
        if (to_string(k) == name) return k;
    }
    throw ConfigError("unknown attention kind '" + name + "'");
}

Variant parse_variant(const std::string& name) {
    if (name.size() == 1 && name[0] >= 'A' && name[0] <= 'D') return static_cast<Variant>(name[0] - 'A');
    throw ConfigError("unknown variant '" + name + "' (expected A, B, C or D)");
}

template <typename T>
RelPosEmbeddings<T> RelPosEmbeddings<T>::make(std::size_t c, std::size_t l, std::size_t h, std::size_t w,
                                              std::uint64_t seed) {
    nn::SeedStream seeds(seed);
    RelPosEmbeddings e;
    e.e_h = BasicTensor<T>({c, 1, h, 1}, NormalInit{0.0, kEmbeddingStd, seeds.next()});
    e.e_w = BasicTensor<T>({c, 1, 1, w}, NormalInit{0.0, kEmbeddingStd, seeds.next()});
    e.e_f = BasicTensor<T>({c, l, 1, 1}, NormalInit{0.0, kEmbeddingStd, seeds.next()});
    return e;
}

template <typename T>
RelPosEmbeddings<T> RelPosEmbeddings<T>::zeros(std::size_t c, std::size_t l, std::size_t h, std::size_t w) {
    return {BasicTensor<T>::zeros({c, 1, h, 1}), BasicTensor<T>::zeros({c, 1, 1, w}),
            BasicTensor<T>::zeros({c, l, 1, 1})};
}

template <typename T>
BasicTensor<T> rel_pos_sum(const RelPosEmbeddings<T>& e) {
    const Shape& h = e.e_h.shape();
    const Shape& w = e.e_w.shape();
    const Shape& f = e.e_f.shape();
    if (h.size() != 4 || w.size() != 4 || f.size() != 4 || h[1] != 1 || h[3] != 1 || w[1] != 1 || w[2] != 1 ||
        f[2] != 1 || f[3] != 1 || h[0] != w[0] || h[0] != f[0]) {
        throw ShapeError("embeddings must be [C,1,H,1], [C,1,1,W], [C,L,1,1]; got " + shape_str(h) + ", " +
                         shape_str(w) + ", " + shape_str(f));
    }
    return add(add(e.e_h, e.e_w), e.e_f);
}

QkvRecipe variant_recipe(Variant variant) {
    const Extent3 s{1, 3, 3};
    const Extent3 t{3, 1, 1};
    switch (variant) {
        case Variant::A: return {s, t, {t, s}};
        case Variant::B: return {t, s, {s, t}};
        case Variant::C: return {s, t, {s, t}};
        case Variant::D: return {t, s, {t, s}};
    }
    throw ConfigError("invalid variant");
}

QkvRecipe pointwise_recipe() { return {{1, 1, 1}, {1, 1, 1}, {{1, 1, 1}}}; }

void DepMhsaConfig::validate() const {
    check_heads(channels, n_head);
    if (recipe.v.empty()) throw ConfigError("value recipe needs at least one kernel");
}

template <typename T>
BasicTensor<T> frame_attention(const BasicTensor<T>& q, const BasicTensor<T>& k, const BasicTensor<T>& v,
                               std::size_t n_head, const BasicTensor<T>& key_pos) {
    check_rank5(q.shape(), "frame_attention");
    if (k.shape() != q.shape() || v.shape() != q.shape()) throw ShapeError("frame_attention: q/k/v shapes differ");
    const std::size_t n = q.dim(0), c = q.dim(1), l = q.dim(2), p = q.dim(3) * q.dim(4);
    check_heads(c, n_head);
    const std::size_t d = c / n_head;

    // [N,C,L,H,W] -> [N,heads,d,L,P]; queries/values as [N,heads,L,P,d], keys as [N,heads,L,d,P].
    const Shape split{n, n_head, d, l, p};
    BasicTensor<T> qh = scale(permute(reshape(q, split), {0, 1, 3, 4, 2}), static_cast<T>(1.0 / std::sqrt(double(d))));
    BasicTensor<T> kt = permute(reshape(k, split), {0, 1, 3, 2, 4});
    if (key_pos.defined()) {
        if (key_pos.shape() != Shape{c, l, q.dim(3), q.dim(4)}) {
            throw ShapeError("position tensor " + shape_str(key_pos.shape()) + " does not match " +
                             shape_str(q.shape()));
        }
        kt = add(kt, permute(reshape(key_pos, {1, n_head, d, l, p}), {0, 1, 3, 2, 4}));
    }
    BasicTensor<T> vh = permute(reshape(v, split), {0, 1, 3, 4, 2});
    BasicTensor<T> a = nn::softmax(matmul(qh, kt), -1);
    BasicTensor<T> y = matmul(a, vh);
    return reshape(permute(y, {0, 1, 4, 2, 3}), q.shape());
}

template <typename T>
BasicTensor<T> temporal_attention(const BasicTensor<T>& q, const BasicTensor<T>& k, const BasicTensor<T>& v,
                                  std::size_t n_head) {
    check_rank5(q.shape(), "temporal_attention");
    if (k.shape() != q.shape() || v.shape() != q.shape()) throw ShapeError("temporal_attention: q/k/v shapes differ");
    const std::size_t n = q.dim(0), c = q.dim(1), l = q.dim(2), p = q.dim(3) * q.dim(4);
    check_heads(c, n_head);
    const std::size_t d = c / n_head;

    // tokens are frames: queries/values [N,heads,P,L,d], keys [N,heads,P,d,L].
    const Shape split{n, n_head, d, l, p};
    BasicTensor<T> qh = scale(permute(reshape(q, split), {0, 1, 4, 3, 2}), static_cast<T>(1.0 / std::sqrt(double(d))));
    BasicTensor<T> kt = permute(reshape(k, split), {0, 1, 4, 2, 3});
    BasicTensor<T> vh = permute(reshape(v, split), {0, 1, 4, 3, 2});
    BasicTensor<T> y = matmul(nn::softmax(matmul(qh, kt), -1), vh);
    return reshape(permute(y, {0, 1, 4, 3, 2}), q.shape());
}

template <typename T>
BasicTensor<T> dep_mhsa_forward(const BasicTensor<T>& x, const DepMhsaConfig& cfg, const QkvWeights<T>& w,
                                NoDeduce<const RelPosEmbeddings<T>*> score_pos, NoDeduce<const RelPosEmbeddings<T>*> residual_pos) {
    cfg.validate();
    check_rank5(x.shape(), "dep_mhsa");
    if (x.dim(1) != cfg.channels || x.dim(2) != cfg.frames || x.dim(3) != cfg.height || x.dim(4) != cfg.width) {
        throw ShapeError("dep_mhsa input " + shape_str(x.shape()) + " does not match configured C,L,H,W = " +
                         std::to_string(cfg.channels) + "," + std::to_string(cfg.frames) + "," +
                         std::to_string(cfg.height) + "," + std::to_string(cfg.width));
    }
    if (w.v.size() != cfg.recipe.v.size()) throw ConfigError("value weight count does not match the recipe");

    BasicTensor<T> q = same_conv(x, w.q);
    BasicTensor<T> k = same_conv(x, w.k);
    BasicTensor<T> v = x;
    for (const auto& wv : w.v) v = same_conv(v, wv);

    const BasicTensor<T> m = score_pos ? rel_pos_sum(*score_pos) : BasicTensor<T>();
    BasicTensor<T> y = frame_attention(q, k, v, cfg.n_head, m);
    return residual_pos ? add(y, rel_pos_sum(*residual_pos)) : y;
}

template <typename T>
BasicTensor<T> mhsa3d_forward(const BasicTensor<T>& x, std::size_t n_head, const QkvWeights<T>& w,
                              NoDeduce<const RelPosEmbeddings<T>*> score_pos) {
    check_rank5(x.shape(), "mhsa3d");
    DepMhsaConfig cfg{x.dim(1), x.dim(2), x.dim(3), x.dim(4), n_head, pointwise_recipe()};
    return dep_mhsa_forward(x, cfg, w, score_pos, static_cast<const RelPosEmbeddings<T>*>(nullptr));
}

template <typename T>
BasicTensor<T> mhsa2p1d_forward(const BasicTensor<T>& x, std::size_t n_head, const QkvWeights<T>& spatial,
                                const QkvWeights<T>& temporal) {
    check_rank5(x.shape(), "mhsa2p1d");
    if (spatial.v.size() != 1 || temporal.v.size() != 1) throw ConfigError("mhsa2p1d uses one value conv per stage");
    BasicTensor<T> s = frame_attention(same_conv(x, spatial.q), same_conv(x, spatial.k), same_conv(x, spatial.v[0]),
                                       n_head, BasicTensor<T>());
    return temporal_attention(same_conv(s, temporal.q), same_conv(s, temporal.k), same_conv(s, temporal.v[0]), n_head);
}

template <typename T>
BasicTensor<T> vanilla_channel_forward(const BasicTensor<T>& x, const GateWeights<T>& g) {
    check_rank5(x.shape(), "vanilla_channel");
    return mul(x, reduce(ReduceOp::mean, gate(x, g), {2, 3, 4}, true));
}

template <typename T>
BasicTensor<T> vanilla_2p1d_forward(const BasicTensor<T>& x, const GateWeights<T>& spatial,
                                    const GateWeights<T>& temporal) {
    check_rank5(x.shape(), "vanilla_2p1d");
    BasicTensor<T> y = mul(x, gate(x, spatial));
    return mul(y, gate(y, temporal));
}

#define MTSNET_INSTANTIATE_ATTN(T)                                                                                    \
    template struct RelPosEmbeddings<T>;                                                                              \
    template BasicTensor<T> rel_pos_sum<T>(const RelPosEmbeddings<T>&);                                               \
    template BasicTensor<T> frame_attention<T>(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,   \
                                               std::size_t, const BasicTensor<T>&);                                   \
    template BasicTensor<T> temporal_attention<T>(const BasicTensor<T>&, const BasicTensor<T>&,                       \
                                                  const BasicTensor<T>&, std::size_t);                                \
    template BasicTensor<T> dep_mhsa_forward<T>(const BasicTensor<T>&, const DepMhsaConfig&, const QkvWeights<T>&,    \
                                                const RelPosEmbeddings<T>*, const RelPosEmbeddings<T>*);              \
    template BasicTensor<T> mhsa3d_forward<T>(const BasicTensor<T>&, std::size_t, const QkvWeights<T>&,               \
                                              const RelPosEmbeddings<T>*);                                            \
    template BasicTensor<T> mhsa2p1d_forward<T>(const BasicTensor<T>&, std::size_t, const QkvWeights<T>&,             \
                                                const QkvWeights<T>&);                                                \
    template BasicTensor<T> vanilla_channel_forward<T>(const BasicTensor<T>&, const GateWeights<T>&);                 \
    template BasicTensor<T> vanilla_2p1d_forward<T>(const BasicTensor<T>&, const GateWeights<T>&,                     \
                                                    const GateWeights<T>&);

MTSNET_INSTANTIATE_ATTN(float)
MTSNET_INSTANTIATE_ATTN(double)

}  // namespace mtsnet::attn
