#include "mtsnet/gradcheck.hpp"

#include "mtsnet/attention.hpp"
#include "mtsnet/nn_ops.hpp"
#include "mtsnet/train.hpp"

namespace mtsnet::gradcheck {

namespace {

std::size_t extent(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

Tensor64 normal(Shape shape, std::mt19937_64& rng, double stddev = 1.0) {
    return Tensor64(std::move(shape), NormalInit{0.0, stddev, rng()});
}

Instance conv3d_instance(std::mt19937_64& rng) {
    const std::size_t cin = extent(rng, 1, 3), cout = extent(rng, 1, 3);
    const nn::Extent3 k{extent(rng, 1, 3), extent(rng, 1, 3), extent(rng, 1, 3)};
    const nn::Extent3 s{extent(rng, 1, 2), extent(rng, 1, 2), extent(rng, 1, 2)};
    nn::ConvOptions opt{s, nn::same_padding(k)};
    const Shape x{extent(rng, 1, 2), cin, extent(rng, k.t, 5), extent(rng, k.h, 5), extent(rng, k.w, 5)};
    return {[opt](const std::vector<Tensor64>& in) { return nn::conv3d(in[0], in[1], in[2], opt); },
            {normal(x, rng), normal({cout, cin, k.t, k.h, k.w}, rng), normal({cout}, rng)}};
}

Instance batchnorm_instance(std::mt19937_64& rng) {
    const std::size_t c = extent(rng, 1, 3);
    const Shape x{extent(rng, 2, 3), c, extent(rng, 1, 3), extent(rng, 1, 3), extent(rng, 1, 3)};
    const bool training = extent(rng, 0, 3) != 0;
    Tensor64 running_mean = normal({c}, rng, 0.5);
    Tensor64 running_var(Shape{c}, UniformInit{0.5, 2.0, rng()});
    return {[c, training, running_mean, running_var](const std::vector<Tensor64>& in) {
                auto state = nn::BatchNormState<double>::make(c);
                state.gamma = in[1];
                state.beta = in[2];
                state.running_mean = running_mean.clone();
                state.running_var = running_var.clone();
                return nn::batchnorm3d(in[0], state, training);
            },
            {normal(x, rng), normal({c}, rng), normal({c}, rng)}};
}

Instance linear_instance(std::mt19937_64& rng) {
    const std::size_t n = extent(rng, 1, 4), f = extent(rng, 1, 5), o = extent(rng, 1, 4);
    return {[](const std::vector<Tensor64>& in) { return nn::linear(in[0], in[1], in[2]); },
            {normal({n, f}, rng), normal({f, o}, rng), normal({o}, rng)}};
}

Instance softmax_instance(std::mt19937_64& rng) {
    const std::size_t rank = extent(rng, 1, 3);
    Shape shape;
    for (std::size_t i = 0; i < rank; ++i) shape.push_back(extent(rng, 1, 5));
    const int axis = static_cast<int>(extent(rng, 0, rank - 1));
    return {[axis](const std::vector<Tensor64>& in) { return nn::softmax(in[0], axis); }, {normal(shape, rng, 2.0)}};
}

struct AttnGeometry {
    std::size_t n, c, l, h, w, n_head;
    Shape x() const { return {n, c, l, h, w}; }
};

AttnGeometry attn_geometry(std::mt19937_64& rng) {
    AttnGeometry g{};
    g.n = extent(rng, 1, 2);
    g.n_head = extent(rng, 1, 2);
    g.c = g.n_head * extent(rng, 1, 2);
    g.l = extent(rng, 1, 3);
    g.h = extent(rng, 1, 3);
    g.w = extent(rng, 1, 3);
    return g;
}

Tensor64 kernel(std::size_t c, const nn::Extent3& k, std::mt19937_64& rng) {
    return normal({c, c, k.t, k.h, k.w}, rng, 0.5);
}

void push_embeddings(std::vector<Tensor64>& in, const AttnGeometry& g, std::mt19937_64& rng) {
    in.push_back(normal({g.c, 1, g.h, 1}, rng, 0.5));
    in.push_back(normal({g.c, 1, 1, g.w}, rng, 0.5));
    in.push_back(normal({g.c, g.l, 1, 1}, rng, 0.5));
}

attn::RelPosEmbeddings<double> embeddings_at(const std::vector<Tensor64>& in, std::size_t i) {
    return {in[i], in[i + 1], in[i + 2]};
}

Instance dep_mhsa_instance(std::mt19937_64& rng) {
    const AttnGeometry g = attn_geometry(rng);
    const auto variant = static_cast<attn::Variant>(extent(rng, 0, 3));
    const attn::DepMhsaConfig cfg{g.c, g.l, g.h, g.w, g.n_head, attn::variant_recipe(variant)};
    std::vector<Tensor64> in{normal(g.x(), rng), kernel(g.c, cfg.recipe.q, rng), kernel(g.c, cfg.recipe.k, rng),
                             kernel(g.c, cfg.recipe.v[0], rng), kernel(g.c, cfg.recipe.v[1], rng)};
    push_embeddings(in, g, rng);
    push_embeddings(in, g, rng);
    return {[cfg](const std::vector<Tensor64>& t) {
                const attn::QkvWeights<double> w{t[1], t[2], {t[3], t[4]}};
                const auto score = embeddings_at(t, 5);
                const auto residual = embeddings_at(t, 8);
                return attn::dep_mhsa_forward(t[0], cfg, w, &score, &residual);
            },
            in};
}

Instance mhsa3d_instance(std::mt19937_64& rng) {
    const AttnGeometry g = attn_geometry(rng);
    const nn::Extent3 one{1, 1, 1};
    std::vector<Tensor64> in{normal(g.x(), rng), kernel(g.c, one, rng), kernel(g.c, one, rng), kernel(g.c, one, rng)};
    push_embeddings(in, g, rng);
    return {[heads = g.n_head](const std::vector<Tensor64>& t) {
                const attn::QkvWeights<double> w{t[1], t[2], {t[3]}};
                const auto score = embeddings_at(t, 4);
                return attn::mhsa3d_forward(t[0], heads, w, &score);
            },
            in};
}

Instance mhsa2p1d_instance(std::mt19937_64& rng) {
    const AttnGeometry g = attn_geometry(rng);
    const nn::Extent3 one{1, 1, 1};
    std::vector<Tensor64> in{normal(g.x(), rng)};
    for (int i = 0; i < 6; ++i) in.push_back(kernel(g.c, one, rng));
    return {[heads = g.n_head](const std::vector<Tensor64>& t) {
                return attn::mhsa2p1d_forward(t[0], heads, {t[1], t[2], {t[3]}}, {t[4], t[5], {t[6]}});
            },
            in};
}

Instance vanilla_channel_instance(std::mt19937_64& rng) {
    const AttnGeometry g = attn_geometry(rng);
    return {[](const std::vector<Tensor64>& t) { return attn::vanilla_channel_forward(t[0], {t[1], t[2]}); },
            {normal(g.x(), rng), kernel(g.c, {1, 3, 3}, rng), kernel(g.c, {3, 1, 1}, rng)}};
}

Instance vanilla_2p1d_instance(std::mt19937_64& rng) {
    const AttnGeometry g = attn_geometry(rng);
    return {[](const std::vector<Tensor64>& t) { return attn::vanilla_2p1d_forward(t[0], {t[1], t[2]}, {t[3], t[4]}); },
            {normal(g.x(), rng), kernel(g.c, {1, 3, 3}, rng), kernel(g.c, {1, 3, 3}, rng),
             kernel(g.c, {3, 1, 1}, rng), kernel(g.c, {3, 1, 1}, rng)}};
}

Instance bce_loss_instance(std::mt19937_64& rng) {
    const std::size_t n = extent(rng, 1, 6);
    std::vector<int> labels(n);
    for (int& y : labels) y = static_cast<int>(extent(rng, 0, 1));
    return {[labels](const std::vector<Tensor64>& in) { return train::bce_loss(in[0], labels); },
            {normal({n, 1}, rng, 3.0)}};
}

std::vector<Entry> build_registry() {
    std::vector<Entry> entries{
        {"conv3d", conv3d_instance},
        {"batchnorm", batchnorm_instance},
        {"linear", linear_instance},
        {"softmax", softmax_instance},
        {"dep_mhsa", dep_mhsa_instance},
        {"mhsa3d", mhsa3d_instance},
        {"mhsa2p1d", mhsa2p1d_instance},
        {"vanilla_channel", vanilla_channel_instance},
        {"vanilla_2p1d", vanilla_2p1d_instance},
        {"bce_loss", bce_loss_instance},
    };
    return entries;
}

}  // namespace

const std::vector<Entry>& registry() {
    static const std::vector<Entry> entries = build_registry();
    return entries;
}

}  // namespace mtsnet::gradcheck
