#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mtsnet/autograd.hpp"
#include "mtsnet/model.hpp"
#include "mtsnet/serialize.hpp"

namespace fs = std::filesystem;
using namespace mtsnet;
using namespace mtsnet::model;

namespace {

ModelSpec tiny(attn::AttentionKind kind = attn::AttentionKind::dep_mhsa) {
    ModelSpec s;
    s.with_width_divisor(16);
    if (kind != attn::AttentionKind::none) s.with_attention({kind, attn::Variant::A, 4, true});
    s.height = s.width = 16;
    s.seed = 21;
    return s;
}

Tensor input(const ModelSpec& s, std::size_t n, std::uint64_t seed) {
    return Tensor(Shape{n, 1, s.frames, s.height, s.width}, UniformInit{0.0, 1.0, seed});
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("mtsnet_model_test_" + name);
    fs::remove_all(p);
    return p;
}

std::size_t total(ModelSpec s) {
    Model m(std::move(s));
    return count_parameters(m).total;
}

}  // namespace

TEST(ShapePlan, FullWidthStages) {
    const auto plan = shape_plan(ModelSpec::mtsnet(), 2);
    const std::vector<Shape> expected{{2, 64, 12, 128, 128}, {2, 64, 12, 128, 128}, {2, 128, 12, 64, 64},
                                      {2, 256, 6, 32, 32},   {2, 512, 3, 16, 16},   {2, 512},
                                      {2, 1}};
    ASSERT_EQ(plan.size(), expected.size());
    for (std::size_t i = 0; i < plan.size(); ++i) EXPECT_EQ(plan[i].shape, expected[i]) << plan[i].name;
}

TEST(ShapePlan, ForwardTraceMatchesPlan) {
    for (auto kind : {attn::AttentionKind::none, attn::AttentionKind::dep_mhsa, attn::AttentionKind::mhsa2p1d,
                      attn::AttentionKind::vanilla_2p1d}) {
        ModelSpec s = tiny(kind);
        Model m(s);
        std::vector<StageShape> trace;
        NoGradGuard guard;
        const Tensor out = m.forward(input(s, 2, 1), false, &trace);
        EXPECT_EQ(out.shape(), (Shape{2, 1}));
        const auto plan = shape_plan(s, 2);
        ASSERT_EQ(trace.size(), plan.size());
        for (std::size_t i = 0; i < plan.size(); ++i) EXPECT_EQ(trace[i].shape, plan[i].shape);
    }
}

TEST(ShapePlan, R3dBackbone) {
    ModelSpec s = tiny(attn::AttentionKind::none);
    s.backbone = Backbone::r3d;
    Model m(s);
    NoGradGuard guard;
    EXPECT_EQ(m.forward(input(s, 1, 2), false).shape(), (Shape{1, 1}));
}

TEST(Model, RejectsWrongInput) {
    Model m(tiny());
    EXPECT_THROW(m.forward(Tensor(Shape{1, 1, 12, 8, 16}), false), ShapeError);
    EXPECT_THROW(m.forward(Tensor(Shape{1, 2, 12, 16, 16}), false), ShapeError);
}

TEST(ModelSpec, Validation) {
    ModelSpec s;
    s.attention[2] = {attn::AttentionKind::dep_mhsa};
    EXPECT_THROW(s.validate(), ConfigError);
    ModelSpec t;
    t.with_attention({attn::AttentionKind::dep_mhsa, attn::Variant::A, 3, true});
    EXPECT_THROW(t.validate(), ConfigError);
    EXPECT_THROW(ModelSpec().with_width_divisor(3), ConfigError);
    EXPECT_THROW(parse_backbone("r4d"), ConfigError);
}

TEST(ModelSpec, EntriesRoundTrip) {
    ModelSpec s = ModelSpec::mtsnet(attn::Variant::C);
    s.with_width_divisor(4);
    s.attention[4].dep_embedding = false;
    s.seed = 99;
    EXPECT_EQ(spec_from_entries(to_map(spec_to_entries(s))), s);
}

TEST(Model, SameSeedSameWeightsAndEvalDeterminism) {
    const ModelSpec s = tiny();
    Model a(s), b(s);
    const Tensor x = input(s, 2, 3);
    NoGradGuard guard;
    const Tensor ya = a.forward(x, false);
    const Tensor yb = b.forward(x, false);
    const Tensor ya2 = a.forward(x, false);
    EXPECT_TRUE(std::equal(ya.data().begin(), ya.data().end(), yb.data().begin()));
    EXPECT_TRUE(std::equal(ya.data().begin(), ya.data().end(), ya2.data().begin()));
}

TEST(ParamCount, DepEmbeddingCostIsChannelsTimesExtentSum) {
    // Two modules per layer, each adding C*(L+H+W) residual position scalars.
    ModelSpec with = ModelSpec::mtsnet();
    ModelSpec without = ModelSpec::mtsnet();
    for (auto& [layer, cfg] : without.attention) cfg.dep_embedding = false;
    const std::size_t expected = 2 * 256 * (6 + 32 + 32) + 2 * 512 * (3 + 16 + 16);
    EXPECT_EQ(total(with) - total(without), expected);
}

TEST(ParamCount, Mhsa3dReplacesSecondConvUnit) {
    ModelSpec none;
    ModelSpec mhsa = ModelSpec::baseline(Backbone::r2plus1d);
    mhsa.with_attention({attn::AttentionKind::mhsa3d, attn::Variant::A, 4, false});
    // Per module: three CxC pointwise convs, score embeddings C*(L+H+W) and
    // the post-attention BN, minus the factored CxC unit they replace.
    auto delta = [](std::size_t c, std::size_t l, std::size_t h, std::size_t w) {
        const std::size_t mid = (c * c * 27) / (c * 9 + 3 * c);
        const std::size_t added = 3 * c * c + c * (l + h + w) + 2 * c;
        const std::size_t removed = c * mid * 9 + mid * c * 3 + 2 * mid + 2 * c;
        return static_cast<long long>(added) - static_cast<long long>(removed);
    };
    const long long expected = 2 * delta(256, 6, 32, 32) + 2 * delta(512, 3, 16, 16);
    EXPECT_EQ(static_cast<long long>(total(mhsa)) - static_cast<long long>(total(none)), expected);
}

TEST(ParamCount, GroupsSumToTotal) {
    Model m(ModelSpec::mtsnet());
    const ParamCount pc = count_parameters(m);
    std::size_t sum = 0;
    for (const auto& g : pc.groups) {
        if (g.name.size() < 5 || g.name.substr(g.name.size() - 5) != ".attn") sum += g.count;
    }
    EXPECT_EQ(sum, pc.total);
    std::size_t direct = 0;
    for (const Tensor& p : m.parameters()) direct += p.numel();
    EXPECT_EQ(direct, pc.total);
    EXPECT_EQ(pc.groups.back().name, "fc");
    EXPECT_EQ(pc.groups.back().count, 513u);
}

TEST(Serialize, RoundTripAndErrors) {
    const Tensor t(Shape{2, 3}, NormalInit{0.0, 1.0, 4});
    std::stringstream ss;
    write_mtsv(ss, t);
    const Tensor back = read_mtsv(ss);
    EXPECT_EQ(back.shape(), t.shape());
    EXPECT_TRUE(std::equal(t.data().begin(), t.data().end(), back.data().begin()));

    std::stringstream bad("MTSX");
    EXPECT_THROW(read_mtsv(bad), DataError);
    std::stringstream full;
    write_mtsv(full, t);
    std::string bytes = full.str();
    std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
    EXPECT_THROW(read_mtsv(truncated), DataError);
    EXPECT_EQ(bytes.substr(0, 4), "MTSV");
    EXPECT_EQ(bytes.size(), 4u + 4u + 2 * 4u + 6 * 4u);
    EXPECT_THROW(load_mtsv("/nonexistent/x.mtsv"), DataError);
}

TEST(Checkpoint, RoundTripPreservesOutputs) {
    const fs::path dir = scratch("roundtrip");
    const ModelSpec s = tiny();
    Model m(s);
    // Move BN running buffers away from their initial values.
    m.forward(input(s, 2, 5), true);
    Tape::current().clear();
    save_checkpoint(dir, m, {{"run.note", "x"}});

    Checkpoint ck = load_checkpoint(dir);
    EXPECT_EQ(ck.model->spec(), s);
    EXPECT_EQ(ck.manifest.at("run.note"), "x");
    NoGradGuard guard;
    const Tensor x = input(s, 2, 6);
    const Tensor a = m.forward(x, false);
    const Tensor b = ck.model->forward(x, false);
    EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
    fs::remove_all(dir);
}

TEST(Checkpoint, ShapeMismatchAndMissingFiles) {
    const fs::path dir = scratch("mismatch");
    EXPECT_THROW(load_checkpoint(dir), CheckpointError);
    Model m(tiny());
    save_checkpoint(dir, m);

    // A tensor file whose shape disagrees with the spec.
    save_mtsv(dir / "fc.weight.mtsv", Tensor(Shape{3, 1}));
    EXPECT_THROW(load_checkpoint(dir), CheckpointError);

    // A manifest whose widths no longer match the stored tensors.
    save_checkpoint(dir, m);
    auto kv = read_key_values(dir / "manifest.txt");
    for (auto& [k, v] : kv) {
        if (k == "model.widths") v = "8,8,16,32,64";
    }
    {
        std::ofstream os(dir / "manifest.txt", std::ios::trunc);
        write_key_values(os, kv);
    }
    EXPECT_THROW(load_checkpoint(dir), CheckpointError);
    fs::remove_all(dir);
}
