#include "mtsnet/model.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

namespace mtsnet::model {

namespace {

std::size_t spatial_stride(int layer) { return layer >= 2 ? 2 : 1; }
std::size_t temporal_stride(int layer) { return layer >= 3 ? 2 : 1; }

std::size_t strided(std::size_t extent, std::size_t stride) {
    return nn::conv_out_extent(extent, 3, stride, 1);
}

std::uint64_t parse_uint(const std::string& key, const std::string& text) {
    std::uint64_t v = 0;
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || ptr != end || text.empty()) {
        throw ConfigError("'" + key + "' expects a non-negative integer, got '" + text + "'");
    }
    return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw ConfigError("'" + key + "' expects true or false, got '" + text + "'");
}

}  // namespace

std::string to_string(Backbone b) { return b == Backbone::r2plus1d ? "r2plus1d" : "r3d"; }

Backbone parse_backbone(const std::string& name) {
    if (name == "r2plus1d") return Backbone::r2plus1d;
    if (name == "r3d") return Backbone::r3d;
    throw ConfigError("unknown backbone '" + name + "'");
}

void ModelSpec::validate() const {
    for (std::size_t w : widths) {
        if (w == 0) throw ConfigError("layer widths must be positive");
    }
    if (blocks_per_layer == 0) throw ConfigError("blocks_per_layer must be >= 1");
    if (frames == 0 || height == 0 || width == 0) throw ConfigError("input extents must be positive");
    for (const auto& [layer, cfg] : attention) {
        if (layer != 3 && layer != 4) {
            throw ConfigError("attention may only be placed at layers 3 and 4, not layer " + std::to_string(layer));
        }
        if (cfg.kind == attn::AttentionKind::none) continue;
        const std::size_t c = widths[static_cast<std::size_t>(layer)];
        const bool headed = cfg.kind == attn::AttentionKind::dep_mhsa || cfg.kind == attn::AttentionKind::mhsa3d ||
                            cfg.kind == attn::AttentionKind::mhsa2p1d;
        if (headed && (cfg.n_head == 0 || c % cfg.n_head != 0)) {
            throw ConfigError("n_head " + std::to_string(cfg.n_head) + " does not divide layer " +
                              std::to_string(layer) + " width " + std::to_string(c));
        }
    }
}

ModelSpec ModelSpec::mtsnet(attn::Variant variant) {
    ModelSpec s;
    s.with_attention({attn::AttentionKind::dep_mhsa, variant, 4, true});
    return s;
}

ModelSpec ModelSpec::baseline(Backbone backbone) {
    ModelSpec s;
    s.backbone = backbone;
    return s;
}

ModelSpec& ModelSpec::with_attention(const attn::AttentionConfig& cfg) {
    attention.clear();
    if (cfg.kind != attn::AttentionKind::none) {
        attention[3] = cfg;
        attention[4] = cfg;
    }
    return *this;
}

ModelSpec& ModelSpec::with_width_divisor(std::size_t divisor) {
    if (divisor == 0) throw ConfigError("width divisor must be >= 1");
    for (auto& w : widths) {
        if (w % divisor != 0) throw ConfigError("width " + std::to_string(w) + " not divisible by " + std::to_string(divisor));
        w /= divisor;
    }
    return *this;
}

KeyValues spec_to_entries(const ModelSpec& spec) {
    std::ostringstream widths;
    for (std::size_t i = 0; i < spec.widths.size(); ++i) widths << (i ? "," : "") << spec.widths[i];
    KeyValues kv{{"model.backbone", to_string(spec.backbone)},
                 {"model.widths", widths.str()},
                 {"model.blocks_per_layer", std::to_string(spec.blocks_per_layer)},
                 {"model.frames", std::to_string(spec.frames)},
                 {"model.height", std::to_string(spec.height)},
                 {"model.width", std::to_string(spec.width)},
                 {"model.seed", std::to_string(spec.seed)}};
    for (const auto& [layer, cfg] : spec.attention) {
        const std::string p = "model.layer" + std::to_string(layer) + ".";
        kv.emplace_back(p + "attention", attn::to_string(cfg.kind));
        kv.emplace_back(p + "variant", attn::to_string(cfg.variant));
        kv.emplace_back(p + "n_head", std::to_string(cfg.n_head));
        kv.emplace_back(p + "dep_embedding", cfg.dep_embedding ? "true" : "false");
    }
    return kv;
}

ModelSpec spec_from_entries(const std::map<std::string, std::string>& kv) {
    auto get = [&](const std::string& key) -> const std::string& {
        const auto it = kv.find(key);
        if (it == kv.end()) throw ConfigError("missing key '" + key + "'");
        return it->second;
    };
    ModelSpec s;
    s.backbone = parse_backbone(get("model.backbone"));
    std::stringstream ws(get("model.widths"));
    std::string item;
    std::size_t i = 0;
    while (std::getline(ws, item, ',')) {
        if (i >= s.widths.size()) throw ConfigError("model.widths needs exactly 5 entries");
        s.widths[i++] = parse_uint("model.widths", item);
    }
    if (i != s.widths.size()) throw ConfigError("model.widths needs exactly 5 entries");
    s.blocks_per_layer = parse_uint("model.blocks_per_layer", get("model.blocks_per_layer"));
    s.frames = parse_uint("model.frames", get("model.frames"));
    s.height = parse_uint("model.height", get("model.height"));
    s.width = parse_uint("model.width", get("model.width"));
    s.seed = parse_uint("model.seed", get("model.seed"));
    for (int layer = 1; layer <= 4; ++layer) {
        const std::string p = "model.layer" + std::to_string(layer) + ".";
        if (!kv.count(p + "attention")) continue;
        attn::AttentionConfig cfg;
        cfg.kind = attn::parse_attention_kind(get(p + "attention"));
        cfg.variant = attn::parse_variant(get(p + "variant"));
        cfg.n_head = parse_uint(p + "n_head", get(p + "n_head"));
        cfg.dep_embedding = parse_bool(p + "dep_embedding", get(p + "dep_embedding"));
        s.attention[layer] = cfg;
    }
    s.validate();
    return s;
}

std::vector<StageShape> shape_plan(const ModelSpec& spec, std::size_t batch) {
    std::size_t l = spec.frames, h = spec.height, w = spec.width;
    std::vector<StageShape> plan{{"stem", {batch, spec.widths[0], l, h, w}}};
    for (int layer = 1; layer <= 4; ++layer) {
        l = strided(l, temporal_stride(layer));
        h = strided(h, spatial_stride(layer));
        w = strided(w, spatial_stride(layer));
        plan.push_back({"layer" + std::to_string(layer), {batch, spec.widths[static_cast<std::size_t>(layer)], l, h, w}});
    }
    plan.push_back({"pool", {batch, spec.widths[4]}});
    plan.push_back({"logits", {batch, 1}});
    return plan;
}

ConvUnit::ConvUnit(Backbone backbone, std::size_t in, std::size_t out, std::size_t k, std::size_t kt, std::size_t ss,
                   std::size_t ts, nn::SeedStream& seeds)
    : factored_(backbone == Backbone::r2plus1d) {
    if (factored_) {
        factored_conv_ = nn::SpatialTemporalConv(in, nn::factored_midplanes(in, out, kt, k), out, k, kt, ss, ts, seeds);
    } else {
        conv_ = nn::Conv3d(in, out, {kt, k, k}, {ts, ss, ss}, false, seeds);
        bn_ = nn::BatchNorm3d(out);
    }
}

Tensor ConvUnit::forward(const Tensor& x, bool training) {
    if (factored_) return factored_conv_.forward(x, training);
    return relu(bn_.forward(conv_.forward(x), training));
}

void ConvUnit::visit(const std::string& prefix, const nn::TensorVisitor& fn) {
    if (factored_) {
        factored_conv_.visit(prefix, fn);
    } else {
        conv_.visit(nn::join_name(prefix, "conv"), fn);
        bn_.visit(nn::join_name(prefix, "bn"), fn);
    }
}

ResidualBlock::ResidualBlock(Backbone backbone, std::size_t in, std::size_t out, std::size_t ss, std::size_t ts,
                             const attn::AttentionConfig& attention, const nn::Extent3& e, nn::SeedStream& seeds)
    : first_(backbone, in, out, 3, 3, ss, ts, seeds) {
    if (attention.kind == attn::AttentionKind::none) {
        second_ = ConvUnit(backbone, out, out, 3, 3, 1, 1, seeds);
    } else {
        attention_ = attn::make_attention(attention, out, e.t, e.h, e.w, seeds);
        attention_bn_ = nn::BatchNorm3d(out);
    }
    projected_ = in != out || ss != 1 || ts != 1;
    if (projected_) {
        shortcut_ = nn::Conv3d(in, out, {1, 1, 1}, {ts, ss, ss}, false, seeds);
        shortcut_bn_ = nn::BatchNorm3d(out);
    }
}

Tensor ResidualBlock::forward(const Tensor& x, bool training) {
    Tensor h = first_.forward(x, training);
    h = attention_ ? relu(attention_bn_.forward(attention_->forward(h), training)) : second_.forward(h, training);
    Tensor skip = projected_ ? shortcut_bn_.forward(shortcut_.forward(x), training) : x;
    return add(h, skip);
}

void ResidualBlock::visit(const std::string& prefix, const nn::TensorVisitor& fn) {
    first_.visit(nn::join_name(prefix, "conv1"), fn);
    if (attention_) {
        attention_->visit(nn::join_name(prefix, "attn"), fn);
        attention_bn_.visit(nn::join_name(prefix, "attn_bn"), fn);
    } else {
        second_.visit(nn::join_name(prefix, "conv2"), fn);
    }
    if (projected_) {
        shortcut_.visit(nn::join_name(prefix, "shortcut"), fn);
        shortcut_bn_.visit(nn::join_name(prefix, "shortcut_bn"), fn);
    }
}

Model::Model(ModelSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    nn::SeedStream seeds(spec_.seed);
    // (2+1)D stem: 1x7x7 then 3x1x1; 3D stem: 3x7x7. Stride 1 throughout.
    stem_ = ConvUnit(spec_.backbone, 1, spec_.widths[0], 7, 3, 1, 1, seeds);
    const auto plan = shape_plan(spec_, 1);
    for (int layer = 1; layer <= 4; ++layer) {
        const Shape& out = plan[static_cast<std::size_t>(layer)].shape;
        const nn::Extent3 extent{out[2], out[3], out[4]};
        const auto it = spec_.attention.find(layer);
        const attn::AttentionConfig cfg = it == spec_.attention.end() ? attn::AttentionConfig{} : it->second;
        std::vector<ResidualBlock> blocks;
        std::size_t in = spec_.widths[static_cast<std::size_t>(layer) - 1];
        const std::size_t width = spec_.widths[static_cast<std::size_t>(layer)];
        for (std::size_t b = 0; b < spec_.blocks_per_layer; ++b) {
            const bool first = b == 0;
            blocks.emplace_back(spec_.backbone, in, width, first ? spatial_stride(layer) : 1,
                                first ? temporal_stride(layer) : 1, cfg, extent, seeds);
            in = width;
        }
        layers_.push_back(std::move(blocks));
    }
    fc_ = nn::Linear(spec_.widths[4], 1, seeds);
}

Tensor Model::forward(const Tensor& x, bool training, std::vector<StageShape>* trace) {
    const Shape expected{x.rank() == 5 ? x.dim(0) : 0, 1, spec_.frames, spec_.height, spec_.width};
    if (x.rank() != 5 || x.shape() != expected) {
        throw ShapeError("model input must be [N,1," + std::to_string(spec_.frames) + "," + std::to_string(spec_.height) +
                         "," + std::to_string(spec_.width) + "], got " + shape_str(x.shape()));
    }
    auto record = [&](const std::string& name, const Tensor& t) {
        if (trace) trace->push_back({name, t.shape()});
    };
    Tensor h = stem_.forward(x, training);
    record("stem", h);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        for (auto& block : layers_[l]) h = block.forward(h, training);
        record("layer" + std::to_string(l + 1), h);
    }
    h = nn::global_avg_pool(h);
    record("pool", h);
    h = fc_.forward(h);
    record("logits", h);
    return h;
}

void Model::visit(const nn::TensorVisitor& fn) {
    stem_.visit("stem", fn);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        for (std::size_t b = 0; b < layers_[l].size(); ++b) {
            layers_[l][b].visit("layer" + std::to_string(l + 1) + "." + std::to_string(b), fn);
        }
    }
    fc_.visit("fc", fn);
}

std::vector<Tensor> Model::parameters() {
    std::vector<Tensor> out;
    visit([&](const std::string&, Tensor& t, bool trainable) {
        if (trainable) out.push_back(t);
    });
    return out;
}

ParamCount count_parameters(Model& model) {
    ParamCount pc;
    auto bump = [&](const std::string& group, std::size_t n) {
        auto it = std::find_if(pc.groups.begin(), pc.groups.end(), [&](const ParamGroup& g) { return g.name == group; });
        if (it == pc.groups.end()) it = pc.groups.insert(pc.groups.end(), ParamGroup{group, 0});
        it->count += n;
    };
    model.visit([&](const std::string& name, Tensor& t, bool trainable) {
        if (!trainable) return;
        const auto first = name.find('.');
        std::string group = name.substr(0, first);
        if (group.rfind("layer", 0) == 0) {
            const auto second = name.find('.', first + 1);
            group = name.substr(0, second);
            bump(group, t.numel());
            if (name.compare(second + 1, 5, "attn.") == 0) bump(group + ".attn", t.numel());
        } else {
            bump(group, t.numel());
        }
        pc.total += t.numel();
    });
    return pc;
}

}  // namespace mtsnet::model
