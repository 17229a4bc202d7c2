#include "mtsnet/attention.hpp"

namespace mtsnet::attn {

namespace {

Tensor conv_weight(std::size_t c, Extent3 k, nn::SeedStream& seeds) {
    return nn::Conv3d(c, c, k, {1, 1, 1}, false, seeds).weight;
}

QkvWeights<float> make_qkv(std::size_t c, const QkvRecipe& r, nn::SeedStream& seeds) {
    QkvWeights<float> w;
    w.q = conv_weight(c, r.q, seeds);
    w.k = conv_weight(c, r.k, seeds);
    for (const auto& kv : r.v) w.v.push_back(conv_weight(c, kv, seeds));
    return w;
}

RelPosEmbeddings<float> make_embeddings(std::size_t c, std::size_t l, std::size_t h, std::size_t w,
                                        nn::SeedStream& seeds) {
    auto e = RelPosEmbeddings<float>::make(c, l, h, w, seeds.next());
    e.e_h.set_requires_grad(true);
    e.e_w.set_requires_grad(true);
    e.e_f.set_requires_grad(true);
    return e;
}

void visit_qkv(const std::string& prefix, QkvWeights<float>& w, const nn::TensorVisitor& fn) {
    fn(nn::join_name(prefix, "q.weight"), w.q, true);
    fn(nn::join_name(prefix, "k.weight"), w.k, true);
    for (std::size_t i = 0; i < w.v.size(); ++i) fn(nn::join_name(prefix, "v" + std::to_string(i) + ".weight"), w.v[i], true);
}

void visit_embeddings(const std::string& prefix, RelPosEmbeddings<float>& e, const nn::TensorVisitor& fn) {
    fn(nn::join_name(prefix, "e_h"), e.e_h, true);
    fn(nn::join_name(prefix, "e_w"), e.e_w, true);
    fn(nn::join_name(prefix, "e_f"), e.e_f, true);
}

/// Covers dep_mhsa (variant recipe) and mhsa3d (pointwise recipe).
class DepMhsaModule final : public AttentionModule {
public:
    DepMhsaModule(DepMhsaConfig cfg, bool residual, nn::SeedStream& seeds) : cfg_(std::move(cfg)) {
        cfg_.validate();
        weights_ = make_qkv(cfg_.channels, cfg_.recipe, seeds);
        score_pos_ = make_embeddings(cfg_.channels, cfg_.frames, cfg_.height, cfg_.width, seeds);
        if (residual) residual_pos_ = make_embeddings(cfg_.channels, cfg_.frames, cfg_.height, cfg_.width, seeds);
    }

    Tensor forward(const Tensor& x) const override {
        return dep_mhsa_forward(x, cfg_, weights_, &score_pos_, residual_pos_.e_h.defined() ? &residual_pos_ : nullptr);
    }

    void visit(const std::string& prefix, const nn::TensorVisitor& fn) override {
        visit_qkv(prefix, weights_, fn);
        visit_embeddings(nn::join_name(prefix, "score_pos"), score_pos_, fn);
        if (residual_pos_.e_h.defined()) visit_embeddings(nn::join_name(prefix, "residual_pos"), residual_pos_, fn);
    }

private:
    DepMhsaConfig cfg_;
    QkvWeights<float> weights_;
    RelPosEmbeddings<float> score_pos_;
    RelPosEmbeddings<float> residual_pos_;
};

class Mhsa2p1dModule final : public AttentionModule {
public:
    Mhsa2p1dModule(std::size_t c, std::size_t n_head, nn::SeedStream& seeds)
        : n_head_(n_head),
          spatial_(make_qkv(c, pointwise_recipe(), seeds)),
          temporal_(make_qkv(c, pointwise_recipe(), seeds)) {}

    Tensor forward(const Tensor& x) const override { return mhsa2p1d_forward(x, n_head_, spatial_, temporal_); }

    void visit(const std::string& prefix, const nn::TensorVisitor& fn) override {
        visit_qkv(nn::join_name(prefix, "spatial"), spatial_, fn);
        visit_qkv(nn::join_name(prefix, "temporal"), temporal_, fn);
    }

private:
    std::size_t n_head_;
    QkvWeights<float> spatial_;
    QkvWeights<float> temporal_;
};

class VanillaChannelModule final : public AttentionModule {
public:
    VanillaChannelModule(std::size_t c, nn::SeedStream& seeds)
        : gate_{conv_weight(c, {1, 3, 3}, seeds), conv_weight(c, {3, 1, 1}, seeds)} {}

    Tensor forward(const Tensor& x) const override { return vanilla_channel_forward(x, gate_); }

    void visit(const std::string& prefix, const nn::TensorVisitor& fn) override {
        fn(nn::join_name(prefix, "gate0.weight"), gate_.first, true);
        fn(nn::join_name(prefix, "gate1.weight"), gate_.second, true);
    }

private:
    GateWeights<float> gate_;
};

class Vanilla2p1dModule final : public AttentionModule {
public:
    Vanilla2p1dModule(std::size_t c, nn::SeedStream& seeds)
        : spatial_{conv_weight(c, {1, 3, 3}, seeds), conv_weight(c, {1, 3, 3}, seeds)},
          temporal_{conv_weight(c, {3, 1, 1}, seeds), conv_weight(c, {3, 1, 1}, seeds)} {}

    Tensor forward(const Tensor& x) const override { return vanilla_2p1d_forward(x, spatial_, temporal_); }

    void visit(const std::string& prefix, const nn::TensorVisitor& fn) override {
        fn(nn::join_name(prefix, "spatial0.weight"), spatial_.first, true);
        fn(nn::join_name(prefix, "spatial1.weight"), spatial_.second, true);
        fn(nn::join_name(prefix, "temporal0.weight"), temporal_.first, true);
        fn(nn::join_name(prefix, "temporal1.weight"), temporal_.second, true);
    }

private:
    GateWeights<float> spatial_;
    GateWeights<float> temporal_;
};

}  // namespace

std::unique_ptr<AttentionModule> make_attention(const AttentionConfig& cfg, std::size_t c, std::size_t l,
                                                std::size_t h, std::size_t w, nn::SeedStream& seeds) {
    switch (cfg.kind) {
        case AttentionKind::dep_mhsa:
            return std::make_unique<DepMhsaModule>(DepMhsaConfig{c, l, h, w, cfg.n_head, variant_recipe(cfg.variant)},
                                                   cfg.dep_embedding, seeds);
        case AttentionKind::mhsa3d:
            return std::make_unique<DepMhsaModule>(DepMhsaConfig{c, l, h, w, cfg.n_head, pointwise_recipe()},
                                                   cfg.dep_embedding, seeds);
        case AttentionKind::mhsa2p1d:
            if (cfg.n_head == 0 || c % cfg.n_head != 0) throw ConfigError("n_head must divide channel count");
            return std::make_unique<Mhsa2p1dModule>(c, cfg.n_head, seeds);
        case AttentionKind::vanilla_channel: return std::make_unique<VanillaChannelModule>(c, seeds);
        case AttentionKind::vanilla_2p1d: return std::make_unique<Vanilla2p1dModule>(c, seeds);
        case AttentionKind::none: break;
    }
    throw ConfigError("attention kind 'none' has no module");
}

}  // namespace mtsnet::attn
