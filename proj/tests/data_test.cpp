#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "mtsnet/data.hpp"
#include "mtsnet/serialize.hpp"

namespace fs = std::filesystem;
using namespace mtsnet;
using namespace mtsnet::data;

namespace {

Tensor indexed(std::size_t h, std::size_t w) {
    std::vector<float> v(h * w);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(i);
    return Tensor({h, w}, v);
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("mtsnet_data_test_" + name);
    fs::remove_all(p);
    return p;
}

}  // namespace

TEST(HuWindow, WindowEdgesAndHalfUp) {
    EXPECT_EQ(hu_window(-50.0), 0.0f);
    EXPECT_EQ(hu_window(150.0), 255.0f);
    EXPECT_EQ(hu_window(50.0), 128.0f);
    EXPECT_EQ(hu_window(-1000.0), 0.0f);
    EXPECT_EQ(hu_window(3000.0), 255.0f);
}

TEST(HuWindow, MonotoneOverSweep) {
    float prev = -1.0f;
    for (int i = 0; i <= 10000; ++i) {
        const double hu = -1000.0 + 0.2 * i;
        const float p = hu_window(hu);
        ASSERT_GE(p, prev) << hu;
        prev = p;
    }
}

TEST(HuWindow, RejectsNonPositiveWidth) { EXPECT_THROW(hu_window(0.0, {50.0, 0.0}), ConfigError); }

TEST(HuWindow, TensorForm) {
    const Tensor t = hu_window(Tensor(Shape{1, 3}, std::vector<float>{-50.0f, 50.0f, 150.0f}));
    EXPECT_EQ(std::vector<float>(t.data().begin(), t.data().end()), (std::vector<float>{0, 128, 255}));
}

TEST(CenterCrop, EvenRemainder) {
    const Tensor c = center_crop(indexed(4, 4), 2, 2);
    EXPECT_EQ(std::vector<float>(c.data().begin(), c.data().end()), (std::vector<float>{5, 6, 9, 10}));
}

TEST(CenterCrop, OddRemainderFloors) {
    const Tensor c = center_crop(indexed(5, 5), 2, 2);
    EXPECT_EQ(std::vector<float>(c.data().begin(), c.data().end()), (std::vector<float>{6, 7, 11, 12}));
}

TEST(CenterCrop, FullSizeIsIdentity) {
    const Tensor img = indexed(6, 7);
    const Tensor c = center_crop(img, 6, 7);
    EXPECT_TRUE(std::equal(c.data().begin(), c.data().end(), img.data().begin()));
}

TEST(CenterCrop, EmbedBackRestoresRegion) {
    const Tensor img = indexed(9, 8);
    const Tensor c = center_crop(img, 4, 3);
    const std::size_t top = 2, left = 2;
    for (std::size_t y = 0; y < 4; ++y) {
        for (std::size_t x = 0; x < 3; ++x) EXPECT_EQ(c.at({y, x}), img.at({top + y, left + x}));
    }
}

TEST(CenterCrop, OversizeThrows) {
    EXPECT_THROW(center_crop(indexed(4, 4), 5, 2), ShapeError);
    EXPECT_THROW(center_crop(Tensor({4}), 2, 2), ShapeError);
}

TEST(Downsample, BlockMean) {
    const Tensor d = downsample_mean(indexed(2, 4), 2);
    EXPECT_EQ(d.shape(), (Shape{1, 2}));
    EXPECT_FLOAT_EQ(d.data()[0], 2.5f);
    EXPECT_FLOAT_EQ(d.data()[1], 4.5f);
    EXPECT_THROW(downsample_mean(indexed(3, 4), 2), ShapeError);
}

TEST(Preprocess, FullSliceTo128) {
    Tensor hu(Shape{512, 512}, 50.0f);
    const Tensor p = preprocess_slice(hu);
    EXPECT_EQ(p.shape(), (Shape{128, 128}));
    for (float v : p.data()) ASSERT_EQ(v, 128.0f);
}

TEST(AssembleClip, TwelveFramesKeepOrder) {
    SubjectRecord s;
    for (int f = 0; f < 12; ++f) s.slices.emplace_back(Shape{4, 4}, static_cast<float>(f * 20));
    const Tensor c = assemble_clip(s);
    EXPECT_EQ(c.shape(), (Shape{1, 12, 4, 4}));
    for (std::size_t f = 0; f < 12; ++f) EXPECT_FLOAT_EQ(c.at({0, f, 1, 2}), static_cast<float>(f * 20) / 255.0f);
}

TEST(AssembleClip, TenFramesRepeatLast) {
    SubjectRecord s;
    for (int f = 0; f < 10; ++f) s.slices.emplace_back(Shape{2, 2}, static_cast<float>(f + 1));
    const Tensor c = assemble_clip(s);
    EXPECT_FLOAT_EQ(c.at({0, 10, 0, 0}), 10.0f / 255.0f);
    EXPECT_FLOAT_EQ(c.at({0, 11, 1, 1}), 10.0f / 255.0f);
}

TEST(AssembleClip, ZeroFramesGiveZeroClipAndRangeHolds) {
    SubjectRecord s;
    for (int f = 0; f < 11; ++f) s.slices.emplace_back(Shape{2, 2}, 0.0f);
    const Tensor zero = assemble_clip(s);
    for (float v : zero.data()) EXPECT_EQ(v, 0.0f);
    const Tensor c = assemble_clip(synth_subject(3, 1, 32));
    for (float v : c.data()) {
        ASSERT_GE(v, 0.0f);
        ASSERT_LE(v, 1.0f);
    }
}

TEST(AssembleClip, FrameCountOutOfRange) {
    SubjectRecord s;
    for (int f = 0; f < 9; ++f) s.slices.emplace_back(Shape{2, 2}, 0.0f);
    EXPECT_THROW(assemble_clip(s), DataError);
    for (int f = 0; f < 4; ++f) s.slices.emplace_back(Shape{2, 2}, 0.0f);
    EXPECT_THROW(assemble_clip(s), DataError);
}

TEST(AssembleClip, Downsampled) {
    const Tensor c = assemble_clip(synth_subject(1, 0, 64), 12, 2);
    EXPECT_EQ(c.shape(), (Shape{1, 12, 32, 32}));
}

TEST(Synth, Deterministic) {
    const auto a = synth_subject(42, 1);
    const auto b = synth_subject(42, 1);
    ASSERT_EQ(a.slices.size(), 12u);
    for (std::size_t f = 0; f < 12; ++f) {
        EXPECT_TRUE(std::equal(a.slices[f].data().begin(), a.slices[f].data().end(), b.slices[f].data().begin()));
    }
    const auto c = synth_subject(43, 1);
    EXPECT_FALSE(std::equal(a.slices[0].data().begin(), a.slices[0].data().end(), c.slices[0].data().begin()));
}

TEST(Synth, BackgroundRangeAndVeinFrames) {
    const auto s = synth_subject(7, 0);
    for (std::size_t f = 0; f < 12; ++f) {
        const auto px = s.slices[f].data();
        const auto bright = std::count_if(px.begin(), px.end(), [](float v) { return v >= 200.0f; });
        if (f >= 4 && f <= 9) {
            EXPECT_GT(bright, 0) << f;
        } else {
            EXPECT_EQ(bright, 0) << f;
            for (float v : px) {
                ASSERT_GE(v, std::floor(0.3 * 255));
                ASSERT_LE(v, std::ceil(0.7 * 255));
            }
        }
    }
}

TEST(Synth, AreaRatioSeparatesClasses) {
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        EXPECT_LT(bright_area_ratio(synth_subject(seed, 1)), 0.5) << seed;
        EXPECT_GE(bright_area_ratio(synth_subject(seed, 0)), 0.49) << seed;
    }
}

TEST(Synth, AreaRatioAtReducedSize) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        EXPECT_LT(bright_area_ratio(synth_subject(seed, 1, 64)), 0.5) << seed;
        EXPECT_GE(bright_area_ratio(synth_subject(seed, 0, 64)), 0.49) << seed;
    }
}

TEST(Split, BalancedTestAndStratifiedRemainder) {
    std::vector<int> labels(747);
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i % 2 == 0 ? 1 : 0;
    const Split s = split_dataset(labels, 100, 9);
    ASSERT_EQ(s.test.size(), 100u);
    std::size_t test_pos = 0;
    for (std::size_t i : s.test) test_pos += labels[i];
    EXPECT_EQ(test_pos, 50u);
    EXPECT_EQ(s.train.size() + s.val.size() + s.test.size(), labels.size());
    // 324 positives and 323 negatives remain; 10% of each goes to validation.
    EXPECT_EQ(s.val.size(), 32u + 32u);

    std::set<std::size_t> all;
    for (const auto* part : {&s.train, &s.val, &s.test}) all.insert(part->begin(), part->end());
    EXPECT_EQ(all.size(), labels.size());

    const Split again = split_dataset(labels, 100, 9);
    EXPECT_EQ(again.train, s.train);
    EXPECT_EQ(again.test, s.test);
    EXPECT_NE(split_dataset(labels, 100, 10).test, s.test);
}

TEST(Split, InsufficientClass) {
    std::vector<int> labels(60, 0);
    labels[0] = labels[1] = 1;
    EXPECT_THROW(split_dataset(labels, 10, 0), DataError);
    EXPECT_THROW(split_dataset({0, 1, 2}, 0, 0), DataError);
}

TEST(DiskLayout, RoundTripMtsvAndPgm) {
    const fs::path root = scratch("layout");
    const auto a = synth_subject(1, 1, 32);
    auto b = synth_subject(2, 0, 32);
    b.slices.resize(10);
    write_subject(root, a, FrameFormat::mtsv);
    write_subject(root, b, FrameFormat::pgm);
    write_labels(root, {{a.subject_id, 1, Modality::ct}, {b.subject_id, 0, Modality::enhanced_ct}});

    const auto entries = read_labels(root);
    ASSERT_EQ(entries.size(), 2u);
    EXPECT_EQ(entries[1].modality, Modality::enhanced_ct);
    const auto ra = read_subject(root, entries[0]);
    const auto rb = read_subject(root, entries[1]);
    ASSERT_EQ(ra.slices.size(), 12u);
    ASSERT_EQ(rb.slices.size(), 10u);
    for (std::size_t f = 0; f < 10; ++f) {
        EXPECT_TRUE(std::equal(rb.slices[f].data().begin(), rb.slices[f].data().end(), b.slices[f].data().begin()));
    }

    const ClipSet set = load_clips(root, 12, 1, 2);
    ASSERT_EQ(set.clips.size(), 2u);
    EXPECT_EQ(set.labels, (std::vector<int>{1, 0}));
    const Tensor direct = assemble_clip(a);
    EXPECT_TRUE(std::equal(set.clips[0].data().begin(), set.clips[0].data().end(), direct.data().begin()));
    fs::remove_all(root);
}

TEST(DiskLayout, MalformedLabels) {
    const fs::path root = scratch("labels");
    fs::create_directories(root);
    EXPECT_THROW(read_labels(root), DataError);
    {
        std::ofstream os(root / "labels.csv");
        os << "subject_id,label,modality\ns1,2,ct\n";
    }
    EXPECT_THROW(read_labels(root), DataError);
    {
        std::ofstream os(root / "labels.csv");
        os << "subject_id,label,modality\ns1,1,mri\n";
    }
    EXPECT_THROW(read_labels(root), DataError);
    {
        std::ofstream os(root / "labels.csv");
        os << "subject_id,label,modality\nmissing,1,ct\n";
    }
    EXPECT_THROW(load_clips(root, 12, 1, 1), DataError);
    fs::remove_all(root);
}

TEST(DiskLayout, TruncatedPgm) {
    const fs::path root = scratch("pgm");
    fs::create_directories(root);
    {
        std::ofstream os(root / "x.pgm", std::ios::binary);
        os << "P5\n4 4\n255\nabc";
    }
    EXPECT_THROW(read_pgm(root / "x.pgm"), DataError);
    fs::remove_all(root);
}

TEST(Loader, ThreadsFromEnvironment) {
    setenv("MTSNET_THREADS", "3", 1);
    EXPECT_EQ(loader_threads(), 3u);
    setenv("MTSNET_THREADS", "zero", 1);
    EXPECT_GE(loader_threads(), 1u);
    unsetenv("MTSNET_THREADS");
}
