#pragma once

#include <memory>
#include <string>
#include <type_traits>
#include <vector>

#include "mtsnet/layers.hpp"

namespace mtsnet::attn {

using nn::Extent3;

/// Keeps a parameter out of template argument deduction (so nullptr binds).
template <typename X>
using NoDeduce = std::type_identity_t<X>;

enum class AttentionKind { none, dep_mhsa, mhsa3d, mhsa2p1d, vanilla_channel, vanilla_2p1d };
enum class Variant { A, B, C, D };

std::string to_string(AttentionKind kind);
std::string to_string(Variant variant);
/// Throw ConfigError on unknown names.
AttentionKind parse_attention_kind(const std::string& name);
Variant parse_variant(const std::string& name);

struct AttentionConfig {
    AttentionKind kind = AttentionKind::none;
    Variant variant = Variant::A;
    std::size_t n_head = 4;
    /// Adds the output-side embedding set (output = Y + E). Meaningful for
    /// dep_mhsa and mhsa3d only.
    bool dep_embedding = true;

    friend bool operator==(const AttentionConfig&, const AttentionConfig&) = default;
};

/// Learnable position tensors, each varying along one axis only:
/// e_h [C,1,H,1], e_w [C,1,1,W], e_f [C,L,1,1].
template <typename T>
struct RelPosEmbeddings {
    BasicTensor<T> e_h;
    BasicTensor<T> e_w;
    BasicTensor<T> e_f;

    /// Drawn from normal(0, 0.02); `seed` fixes all three.
    static RelPosEmbeddings make(std::size_t c, std::size_t l, std::size_t h, std::size_t w, std::uint64_t seed);
    static RelPosEmbeddings zeros(std::size_t c, std::size_t l, std::size_t h, std::size_t w);
};

/// E = e_h + e_w + e_f broadcast to [C,L,H,W].
template <typename T>
BasicTensor<T> rel_pos_sum(const RelPosEmbeddings<T>& e);

/// Kernels generating Q, K and V; V applies its kernels in order.
struct QkvRecipe {
    Extent3 q;
    Extent3 k;
    std::vector<Extent3> v;

    friend bool operator==(const QkvRecipe&, const QkvRecipe&) = default;
};

/// A: q 1x3x3, k 3x1x1, v 3x1x1 then 1x3x3.  B: q 3x1x1, k 1x3x3, v 1x3x3 then 3x1x1.
/// C: q 1x3x3, k 3x1x1, v 1x3x3 then 3x1x1.  D: q 3x1x1, k 1x3x3, v 3x1x1 then 1x3x3.
QkvRecipe variant_recipe(Variant variant);
/// q, k and v each a single 1x1x1 conv.
QkvRecipe pointwise_recipe();

struct DepMhsaConfig {
    std::size_t channels = 0;
    std::size_t frames = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t n_head = 4;
    QkvRecipe recipe;

    /// ConfigError unless n_head >= 1 divides channels and the recipe is complete.
    void validate() const;
};

/// Bias-free C -> C conv weights for Q, K and each V stage.
template <typename T>
struct QkvWeights {
    BasicTensor<T> q;
    BasicTensor<T> k;
    std::vector<BasicTensor<T>> v;
};

/// Multi-head attention inside each frame over its H*W sites. q, k, v are
/// [N,C,L,H,W]; head h owns channels [h*d, (h+1)*d) with d = C / n_head.
/// `key_pos` ([C,L,H,W], may be undefined) is added to the keys, so the score
/// is q_i . (k_j + m_j) / sqrt(d).
template <typename T>
BasicTensor<T> frame_attention(const BasicTensor<T>& q, const BasicTensor<T>& k, const BasicTensor<T>& v,
                               std::size_t n_head, const BasicTensor<T>& key_pos);

/// Multi-head attention across the L frames at each spatial site.
template <typename T>
BasicTensor<T> temporal_attention(const BasicTensor<T>& q, const BasicTensor<T>& k, const BasicTensor<T>& v,
                                  std::size_t n_head);

/// Convolutional Q/K/V per the recipe, frame attention with `score_pos`
/// added to the keys, then `+ rel_pos_sum(*residual_pos)`. Either embedding
/// set may be null.
template <typename T>
BasicTensor<T> dep_mhsa_forward(const BasicTensor<T>& x, const DepMhsaConfig& cfg, const QkvWeights<T>& w,
                                NoDeduce<const RelPosEmbeddings<T>*> score_pos, NoDeduce<const RelPosEmbeddings<T>*> residual_pos);

/// Pointwise Q/K/V with position on the keys and no output-side residual.
template <typename T>
BasicTensor<T> mhsa3d_forward(const BasicTensor<T>& x, std::size_t n_head, const QkvWeights<T>& w,
                              NoDeduce<const RelPosEmbeddings<T>*> score_pos);

/// Frame attention followed by temporal attention, each with its own
/// pointwise Q/K/V and no position terms.
template <typename T>
BasicTensor<T> mhsa2p1d_forward(const BasicTensor<T>& x, std::size_t n_head, const QkvWeights<T>& spatial,
                                const QkvWeights<T>& temporal);

/// Conv-ReLU-Conv-sigmoid gate weights.
template <typename T>
struct GateWeights {
    BasicTensor<T> first;
    BasicTensor<T> second;
};

/// w = mean over (L,H,W) of sigmoid(conv3x1x1(relu(conv1x3x3(x)))); out = x * w per channel.
template <typename T>
BasicTensor<T> vanilla_channel_forward(const BasicTensor<T>& x, const GateWeights<T>& g);

/// y = x * sigmoid(gate of two 1x3x3 convs); out = y * sigmoid(gate of two 3x1x1 convs on y).
template <typename T>
BasicTensor<T> vanilla_2p1d_forward(const BasicTensor<T>& x, const GateWeights<T>& spatial,
                                    const GateWeights<T>& temporal);

/// Shape-preserving attention block on [N,C,L,H,W] with float parameters.
class AttentionModule {
public:
    virtual ~AttentionModule() = default;
    virtual Tensor forward(const Tensor& x) const = 0;
    virtual void visit(const std::string& prefix, const nn::TensorVisitor& fn) = 0;
};

/// Builds the module selected by `cfg.kind` for inputs of C channels and
/// L x H x W extent. Conv weights are Kaiming-uniform, embeddings
/// normal(0, 0.02). Throws ConfigError for kind none or bad head counts.
std::unique_ptr<AttentionModule> make_attention(const AttentionConfig& cfg, std::size_t c, std::size_t l,
                                                std::size_t h, std::size_t w, nn::SeedStream& seeds);

}  // namespace mtsnet::attn
