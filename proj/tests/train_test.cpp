#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "mtsnet/autograd.hpp"
#include "mtsnet/gradcheck.hpp"
#include "mtsnet/train.hpp"

using namespace mtsnet;
using namespace mtsnet::train;

namespace {

// Independent AUC: area under the empirical ROC curve by the trapezoid rule,
// sweeping thresholds over the distinct scores from high to low.
double trapezoid_auc(const std::vector<double>& s, const std::vector<int>& y) {
    std::vector<double> thresholds(s);
    std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
    const double np = static_cast<double>(std::count(y.begin(), y.end(), 1));
    const double nn = static_cast<double>(y.size()) - np;
    double area = 0.0, prev_tpr = 0.0, prev_fpr = 0.0;
    for (double t : thresholds) {
        double tp = 0, fp = 0;
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (s[i] >= t) (y[i] == 1 ? tp : fp) += 1;
        }
        const double tpr = tp / np, fpr = fp / nn;
        area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        prev_tpr = tpr;
        prev_fpr = fpr;
    }
    return area;
}

double pairwise_auc(const std::vector<double>& s, const std::vector<int>& y) {
    double credit = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (y[i] != 1 || y[j] != 0) continue;
            pairs += 1;
            credit += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
        }
    }
    return credit / pairs;
}

void random_scores(std::mt19937_64& rng, std::vector<double>& s, std::vector<int>& y) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(2, 200)(rng);
    s.resize(n);
    y.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        // Coarse grid so ties are common.
        s[i] = std::uniform_int_distribution<int>(0, 20)(rng) / 20.0;
        y[i] = std::uniform_int_distribution<int>(0, 1)(rng);
    }
    y[0] = 0;
    y[1] = 1;
}

}  // namespace

TEST(BceLoss, ClosedForms) {
    EXPECT_NEAR(bce_loss(Tensor({1, 1}, {0.0f}), {1}).item(), std::log(2.0), 1e-6);
    const float big = bce_loss(Tensor({1, 1}, {20.0f}), {1}).item();
    EXPECT_TRUE(std::isfinite(big));
    EXPECT_NEAR(big, 2.06e-9, 1e-9);
    EXPECT_NEAR(bce_loss(Tensor({1, 1}, {-200.0f}), {1}).item(), 200.0, 1e-3);
}

TEST(BceLoss, GradientIsSigmoidMinusLabel) {
    Tensor z(Shape{2, 1}, std::vector<float>{0.5f, -1.0f});
    z.set_requires_grad(true);
    backward(bce_loss(z, {1, 0}));
    EXPECT_NEAR(z.grad()[0], (1.0 / (1.0 + std::exp(-0.5)) - 1.0) / 2.0, 1e-6);
    EXPECT_NEAR(z.grad()[1], (1.0 / (1.0 + std::exp(1.0))) / 2.0, 1e-6);
}

TEST(BceLoss, Errors) {
    EXPECT_THROW(bce_loss(Tensor({1, 1}), {2}), DataError);
    EXPECT_THROW(bce_loss(Tensor({2, 1}), {1}), ShapeError);
}

TEST(BceLoss, Gradcheck) {
    const auto s = gradcheck::run("bce_loss", 20, 1e-3, 5);
    EXPECT_EQ(s.passed, s.trials);
}

TEST(LrSchedule, StepDecay) {
    TrainConfig cfg;
    EXPECT_DOUBLE_EQ(lr_at(0, cfg), 5e-4);
    EXPECT_NEAR(lr_at(25, cfg), 1e-4, 1e-15);
    EXPECT_NEAR(lr_at(99, cfg), 4e-6, 1e-15);
    for (std::size_t e = 1; e < 200; ++e) EXPECT_LE(lr_at(e, cfg), lr_at(e - 1, cfg));
    cfg.decay_every = 10;
    EXPECT_NEAR(lr_at(10, cfg), 1e-4, 1e-15);
}

TEST(TrainConfig, Validation) {
    TrainConfig cfg;
    cfg.decay_factor = 0.0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = {};
    cfg.batch_size = 0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    EXPECT_THROW(parse_optimizer("rmsprop"), ConfigError);
}

TEST(TrainConfig, EntriesRoundTrip) {
    TrainConfig cfg;
    cfg.lr0 = 3e-4;
    cfg.epochs = 7;
    cfg.optimizer = OptimizerKind::sgd;
    const TrainConfig back = config_from_entries(to_map(config_to_entries(cfg)));
    EXPECT_EQ(back.lr0, cfg.lr0);
    EXPECT_EQ(back.epochs, 7u);
    EXPECT_EQ(back.optimizer, OptimizerKind::sgd);
    EXPECT_THROW(config_from_entries({{"train.lr0", "fast"}}), ConfigError);
}

TEST(Metrics, WorkedExample) {
    const EvalReport r = metrics({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1});
    EXPECT_DOUBLE_EQ(r.auc, 0.75);
    EXPECT_DOUBLE_EQ(r.accuracy, 0.75);
    EXPECT_NEAR(r.f1, 2.0 / 3.0, 1e-12);
    EXPECT_EQ(r.confusion.tp, 1u);
    EXPECT_EQ(r.confusion.fn, 1u);
    EXPECT_EQ(r.confusion.tn, 2u);
    EXPECT_EQ(r.confusion.fp, 0u);
}

TEST(Metrics, PerfectAndInverted) {
    const EvalReport r = metrics({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1});
    EXPECT_EQ(r.auc, 1.0);
    EXPECT_EQ(r.accuracy, 1.0);
    EXPECT_EQ(r.f1, 1.0);
    EXPECT_EQ(auc({0.1, 0.2, 0.8, 0.9}, {1, 1, 0, 0}), 0.0);
}

TEST(Metrics, F1ZeroWhenUndefined) { EXPECT_EQ(metrics({0.1, 0.2}, {0, 1}).f1, 0.0); }

TEST(Metrics, Errors) {
    EXPECT_THROW(metrics({0.5, 0.6}, {1, 1}), DataError);
    EXPECT_THROW(metrics({}, {}), DataError);
    EXPECT_THROW(metrics({0.5}, {1, 0}), DataError);
    EXPECT_THROW(metrics({0.5, 0.1}, {1, 3}), DataError);
}

TEST(Metrics, AucMatchesPairwiseAndTrapezoid) {
    std::mt19937_64 rng(11);
    std::vector<double> s;
    std::vector<int> y;
    for (int trial = 0; trial < 100; ++trial) {
        random_scores(rng, s, y);
        const double a = auc(s, y);
        EXPECT_NEAR(a, pairwise_auc(s, y), 1e-9);
        EXPECT_NEAR(a, trapezoid_auc(s, y), 1e-9);
    }
}

TEST(Metrics, AucInvariantUnderMonotoneTransform) {
    std::mt19937_64 rng(12);
    std::vector<double> s;
    std::vector<int> y;
    random_scores(rng, s, y);
    std::vector<double> t(s.size());
    std::transform(s.begin(), s.end(), t.begin(), [](double v) { return std::exp(3.0 * v) - 7.0; });
    EXPECT_DOUBLE_EQ(auc(s, y), auc(t, y));
}

TEST(Metrics, ReorderingInvariance) {
    std::mt19937_64 rng(13);
    std::vector<double> s;
    std::vector<int> y;
    random_scores(rng, s, y);
    const EvalReport a = metrics(s, y);
    std::vector<std::size_t> perm(s.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> s2;
    std::vector<int> y2;
    for (std::size_t i : perm) {
        s2.push_back(s[i]);
        y2.push_back(y[i]);
    }
    const EvalReport b = metrics(s2, y2);
    EXPECT_EQ(a.accuracy, b.accuracy);
    EXPECT_EQ(a.f1, b.f1);
    EXPECT_DOUBLE_EQ(a.auc, b.auc);
}

TEST(Optimizer, AdamDecreasesQuadratic) {
    Tensor w = Tensor::scalar(3.0f);
    w.set_requires_grad(true);
    TrainConfig cfg;
    cfg.lr0 = 0.1;
    Optimizer opt({w}, cfg);
    double prev = 1e30;
    for (int step = 0; step < 10; ++step) {
        opt.zero_grad();
        const Tensor loss = mul(w, w);
        const double value = loss.item();
        EXPECT_LT(value, prev);
        prev = value;
        backward(loss);
        opt.step(cfg.lr0);
    }
}

TEST(Optimizer, FirstAdamStepMovesByLr) {
    // With bias correction the first step is lr * g / (|g| + eps).
    Tensor w = Tensor::scalar(2.0f);
    w.set_requires_grad(true);
    TrainConfig cfg;
    Optimizer opt({w}, cfg);
    backward(mul(w, w));
    opt.step(0.01);
    EXPECT_NEAR(w.item(), 1.99f, 1e-6);
}

TEST(Optimizer, SgdMomentum) {
    Tensor w = Tensor::scalar(1.0f);
    w.set_requires_grad(true);
    TrainConfig cfg;
    cfg.optimizer = OptimizerKind::sgd;
    Optimizer opt({w}, cfg);
    for (int i = 0; i < 2; ++i) {
        opt.zero_grad();
        backward(scale(w, 1.0f));
        opt.step(0.1);
    }
    // v1 = 1, v2 = 0.9 + 1 = 1.9 -> w = 1 - 0.1 - 0.19
    EXPECT_NEAR(w.item(), 0.71f, 1e-6);
}

TEST(ClipGradNorm, ScalesToLimit) {
    Tensor a(Shape{2}, 0.0f);
    a.set_requires_grad(true);
    a.mutable_grad()[0] = 3.0f;
    a.mutable_grad()[1] = 4.0f;
    std::vector<Tensor> ps{a};
    EXPECT_NEAR(clip_grad_norm(ps, 1.0), 5.0, 1e-9);
    EXPECT_NEAR(a.grad()[0], 0.6f, 1e-6);
    EXPECT_NEAR(a.grad()[1], 0.8f, 1e-6);
}

namespace {

model::ModelSpec tiny_spec() {
    model::ModelSpec spec = model::ModelSpec::mtsnet();
    spec.with_width_divisor(16);
    spec.frames = 12;
    spec.height = spec.width = 16;
    spec.seed = 3;
    return spec;
}

LabeledClips tiny_clips(std::size_t n, std::uint64_t seed) {
    LabeledClips set;
    for (std::size_t i = 0; i < n; ++i) {
        const int label = static_cast<int>(i % 2);
        set.clips.push_back(data::assemble_clip(data::synth_subject(seed + i, label, 32), 12, 2));
        set.labels.push_back(label);
    }
    return set;
}

}  // namespace

TEST(Train, ZeroLearningRateLeavesParametersUnchanged) {
    model::Model m(tiny_spec());
    std::vector<std::vector<float>> before;
    for (const Tensor& p : m.parameters()) before.emplace_back(p.data().begin(), p.data().end());
    TrainConfig cfg;
    cfg.lr0 = 0.0;
    cfg.epochs = 2;
    cfg.batch_size = 4;
    train::train(m, tiny_clips(6, 0), {}, cfg);
    const auto after = m.parameters();
    for (std::size_t k = 0; k < after.size(); ++k) {
        ASSERT_TRUE(std::equal(before[k].begin(), before[k].end(), after[k].data().begin())) << k;
    }
}

TEST(Train, EveryParameterReceivesGradient) {
    model::Model m(tiny_spec());
    const LabeledClips set = tiny_clips(4, 0);
    const Tensor loss = bce_loss(m.forward(make_batch(set.clips, {0, 1, 2, 3}), true), set.labels);
    backward(loss);
    m.visit([](const std::string& name, Tensor& p, bool trainable) {
        if (!trainable) return;
        ASSERT_TRUE(p.has_grad()) << name;
        bool nonzero = false;
        for (float g : p.grad()) nonzero = nonzero || g != 0.0f;
        EXPECT_TRUE(nonzero) << name;
    });
}

TEST(Train, DeterministicAndLogged) {
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 4;
    cfg.seed = 5;
    const LabeledClips tr = tiny_clips(8, 0), val = tiny_clips(4, 100);
    model::Model a(tiny_spec()), b(tiny_spec());
    std::vector<EpochLog> seen;
    const TrainResult ra = train::train(a, tr, val, cfg, [&](const EpochLog& row) { seen.push_back(row); });
    const TrainResult rb = train::train(b, tr, val, cfg);
    ASSERT_EQ(ra.log.size(), 2u);
    EXPECT_EQ(seen.size(), 2u);
    EXPECT_EQ(ra.log[0].train_loss, rb.log[0].train_loss);
    EXPECT_EQ(ra.best_epoch, rb.best_epoch);
    EXPECT_GE(ra.best_epoch, 0);
    EXPECT_EQ(predict(a, val.clips), predict(b, val.clips));
    EXPECT_EQ(log_header(), "epoch,lr,train_loss,val_acc,val_f1,val_auc");
    EXPECT_EQ(format_log_row(ra.log[0]).substr(0, 9), "0,0.0005,");
}

TEST(Train, BestValidationWeightsRestored) {
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 4;
    const LabeledClips tr = tiny_clips(8, 0), val = tiny_clips(6, 50);
    model::Model m(tiny_spec());
    const TrainResult r = train::train(m, tr, val, cfg);
    EXPECT_DOUBLE_EQ(evaluate(m, val, 4).auc, r.best_val_auc);
}

TEST(Train, EmptyTrainingSet) {
    model::Model m(tiny_spec());
    EXPECT_THROW(train::train(m, {}, {}, TrainConfig{}), DataError);
}
