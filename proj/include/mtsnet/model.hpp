#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mtsnet/attention.hpp"
#include "mtsnet/keyvalue.hpp"
#include "mtsnet/layers.hpp"

namespace mtsnet::model {

enum class Backbone { r2plus1d, r3d };

std::string to_string(Backbone b);
Backbone parse_backbone(const std::string& name);

struct ModelSpec {
    Backbone backbone = Backbone::r2plus1d;
    /// Stem followed by layers 1-4.
    std::array<std::size_t, 5> widths{64, 64, 128, 256, 512};
    std::size_t blocks_per_layer = 2;
    /// Attention placement by layer index; only layers 3 and 4 accept one.
    std::map<int, attn::AttentionConfig> attention;
    /// Clip extents (frames, height, width); the input has one channel.
    std::size_t frames = 12;
    std::size_t height = 128;
    std::size_t width = 128;
    std::uint64_t seed = 0;

    /// ConfigError on misplaced attention, zero widths or extents too small
    /// for the stride plan.
    void validate() const;

    /// (2+1)D backbone with DEP-MHSA at layers 3 and 4.
    static ModelSpec mtsnet(attn::Variant variant = attn::Variant::A);
    static ModelSpec baseline(Backbone backbone);
    /// Same attention config at layers 3 and 4, or none.
    ModelSpec& with_attention(const attn::AttentionConfig& cfg);
    ModelSpec& with_width_divisor(std::size_t divisor);

    friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

KeyValues spec_to_entries(const ModelSpec& spec);
/// Reads the `model.*` keys written by spec_to_entries; throws ConfigError.
ModelSpec spec_from_entries(const std::map<std::string, std::string>& kv);

struct StageShape {
    std::string name;
    Shape shape;
};

/// Expected activation shapes: stem, layer1..layer4, pool, logits.
std::vector<StageShape> shape_plan(const ModelSpec& spec, std::size_t batch);

/// A k_t x k x k conv stage: a factored (2+1)D pair for the (2+1)D backbone
/// (hidden width from nn::factored_midplanes), or a full conv + BN + ReLU for
/// the 3D backbone.
class ConvUnit {
public:
    ConvUnit() = default;
    ConvUnit(Backbone backbone, std::size_t in, std::size_t out, std::size_t k_spatial, std::size_t k_temporal,
             std::size_t spatial_stride, std::size_t temporal_stride, nn::SeedStream& seeds);

    Tensor forward(const Tensor& x, bool training);
    void visit(const std::string& prefix, const nn::TensorVisitor& fn);

private:
    bool factored_ = true;
    nn::SpatialTemporalConv factored_conv_;
    nn::Conv3d conv_;
    nn::BatchNorm3d bn_;
};

/// out = F(x) + shortcut(x). F is two conv units, or one conv unit followed
/// by ReLU(BN(attention)) when the block carries attention. The shortcut is
/// the identity, or a strided 1x1x1 conv + BN when the shape changes.
class ResidualBlock {
public:
    ResidualBlock(Backbone backbone, std::size_t in, std::size_t out, std::size_t spatial_stride,
                  std::size_t temporal_stride, const attn::AttentionConfig& attention, const nn::Extent3& out_extent,
                  nn::SeedStream& seeds);

    Tensor forward(const Tensor& x, bool training);
    void visit(const std::string& prefix, const nn::TensorVisitor& fn);
    bool has_attention() const { return attention_ != nullptr; }

private:
    ConvUnit first_;
    ConvUnit second_;
    std::unique_ptr<attn::AttentionModule> attention_;
    nn::BatchNorm3d attention_bn_;
    bool projected_ = false;
    nn::Conv3d shortcut_;
    nn::BatchNorm3d shortcut_bn_;
};

class Model {
public:
    explicit Model(ModelSpec spec);

    /// x [N,1,frames,height,width] -> logits [N,1]. When `trace` is given it
    /// receives the stage shapes in shape_plan order.
    Tensor forward(const Tensor& x, bool training, std::vector<StageShape>* trace = nullptr);

    /// Every named tensor (parameters and BN running buffers) in a fixed order.
    void visit(const nn::TensorVisitor& fn);
    /// Trainable tensors in visit order (handles share storage with the model).
    std::vector<Tensor> parameters();
    const ModelSpec& spec() const { return spec_; }

private:
    ModelSpec spec_;
    ConvUnit stem_;
    std::vector<std::vector<ResidualBlock>> layers_;
    nn::Linear fc_;
};

struct ParamGroup {
    std::string name;
    std::size_t count = 0;
};

struct ParamCount {
    /// stem, layerL.B for each block, layerL.B.attn for attention modules, fc.
    std::vector<ParamGroup> groups;
    std::size_t total = 0;
};

/// Exact count of learnable scalars (BN running buffers excluded). The
/// attention groups are nested in their block's count, not added to total.
ParamCount count_parameters(Model& model);

/// Checkpoint directory: one MTSV1 file per named tensor plus manifest.txt
/// holding the model spec, tensor shapes and caller-supplied `extra` keys.
void save_checkpoint(const std::filesystem::path& dir, Model& model, const KeyValues& extra = {});

struct Checkpoint {
    std::unique_ptr<Model> model;
    std::map<std::string, std::string> manifest;
};

/// Throws CheckpointError when files are missing or a stored tensor does not
/// match the shape the manifest's spec requires.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace mtsnet::model
