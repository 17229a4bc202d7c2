#include "mtsnet/train.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "mtsnet/autograd.hpp"
#include "mtsnet/ops.hpp"

namespace mtsnet::train {

template <typename T>
BasicTensor<T> bce_loss(const BasicTensor<T>& logits, const std::vector<int>& labels) {
    const std::size_t n = logits.numel();
    const bool shape_ok = logits.rank() == 1 || (logits.rank() == 2 && logits.dim(1) == 1);
    if (!shape_ok || n != labels.size() || n == 0) {
        throw ShapeError("bce_loss: logits " + shape_str(logits.shape()) + " vs " + std::to_string(labels.size()) +
                         " labels");
    }
    for (int y : labels) {
        if (y != 0 && y != 1) throw DataError("bce_loss: label " + std::to_string(y) + " is not 0 or 1");
    }
    const T* z = logits.raw();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double zi = z[i];
        total += std::max(zi, 0.0) - zi * labels[i] + std::log1p(std::exp(-std::abs(zi)));
    }
    BasicTensor<T> out = BasicTensor<T>::scalar(static_cast<T>(total / static_cast<double>(n)));
    if (detail::should_record<T>({&logits})) {
        out.set_requires_grad(true);
        Tape::current().record([labels, zs = logits.storage(), os = out.storage()] {
            if (os->grad.empty() || !zs->requires_grad) return;
            T* g = detail::grad_buffer<T>(*zs);
            const std::size_t n = zs->data.size();
            const T upstream = os->grad[0] / static_cast<T>(n);
            for (std::size_t i = 0; i < n; ++i) {
                const T zi = zs->data[i];
                const T s = zi >= T{0} ? T{1} / (T{1} + std::exp(-zi)) : std::exp(zi) / (T{1} + std::exp(zi));
                g[i] += upstream * (s - static_cast<T>(labels[i]));
            }
        });
    }
    return out;
}

template BasicTensor<float> bce_loss<float>(const BasicTensor<float>&, const std::vector<int>&);
template BasicTensor<double> bce_loss<double>(const BasicTensor<double>&, const std::vector<int>&);

std::string to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

OptimizerKind parse_optimizer(const std::string& name) {
    if (name == "adam") return OptimizerKind::adam;
    if (name == "sgd") return OptimizerKind::sgd;
    throw ConfigError("unknown optimizer '" + name + "' (expected adam or sgd)");
}

void TrainConfig::validate() const {
    if (!(lr0 >= 0.0) || !std::isfinite(lr0)) throw ConfigError("lr0 must be a finite value >= 0");
    if (!(decay_factor > 0.0 && decay_factor <= 1.0)) throw ConfigError("decay_factor must be in (0, 1]");
    if (decay_every == 0) throw ConfigError("decay_every must be >= 1");
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (!(grad_clip >= 0.0)) throw ConfigError("grad_clip must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("adam betas must be in [0, 1)");
    if (!(eps > 0.0)) throw ConfigError("eps must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
}

namespace {

std::string format_double(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

double parse_double(const std::string& key, const std::string& text) {
    double v = 0.0;
    const char* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc{} || ptr != end) throw ConfigError(key + ": expected a number, got '" + text + "'");
    return v;
}

std::uint64_t parse_uint(const std::string& key, const std::string& text) {
    std::uint64_t v = 0;
    const char* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc{} || ptr != end) throw ConfigError(key + ": expected a non-negative integer, got '" + text + "'");
    return v;
}

}  // namespace

KeyValues config_to_entries(const TrainConfig& cfg) {
    return {
        {"train.lr0", format_double(cfg.lr0)},
        {"train.decay_factor", format_double(cfg.decay_factor)},
        {"train.decay_every", std::to_string(cfg.decay_every)},
        {"train.epochs", std::to_string(cfg.epochs)},
        {"train.batch_size", std::to_string(cfg.batch_size)},
        {"train.seed", std::to_string(cfg.seed)},
        {"train.optimizer", to_string(cfg.optimizer)},
        {"train.beta1", format_double(cfg.beta1)},
        {"train.beta2", format_double(cfg.beta2)},
        {"train.eps", format_double(cfg.eps)},
        {"train.momentum", format_double(cfg.momentum)},
        {"train.grad_clip", format_double(cfg.grad_clip)},
    };
}

TrainConfig config_from_entries(const std::map<std::string, std::string>& kv, TrainConfig base) {
    auto dbl = [&](const char* key, double& field) {
        if (auto it = kv.find(key); it != kv.end()) field = parse_double(key, it->second);
    };
    auto uint = [&](const char* key, auto& field) {
        if (auto it = kv.find(key); it != kv.end()) field = parse_uint(key, it->second);
    };
    dbl("train.lr0", base.lr0);
    dbl("train.decay_factor", base.decay_factor);
    uint("train.decay_every", base.decay_every);
    uint("train.epochs", base.epochs);
    uint("train.batch_size", base.batch_size);
    uint("train.seed", base.seed);
    if (auto it = kv.find("train.optimizer"); it != kv.end()) base.optimizer = parse_optimizer(it->second);
    dbl("train.beta1", base.beta1);
    dbl("train.beta2", base.beta2);
    dbl("train.eps", base.eps);
    dbl("train.momentum", base.momentum);
    dbl("train.grad_clip", base.grad_clip);
    return base;
}

double lr_at(std::size_t epoch, const TrainConfig& cfg) {
    return cfg.lr0 * std::pow(cfg.decay_factor, static_cast<double>(epoch / cfg.decay_every));
}

namespace {

void check_labels(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw DataError("scores and labels differ in length");
    if (scores.empty()) throw DataError("no scores to evaluate");
    for (int y : labels) {
        if (y != 0 && y != 1) throw DataError("label " + std::to_string(y) + " is not 0 or 1");
    }
}

}  // namespace

double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    check_labels(scores, labels);
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // Sum of 1-based midranks of the positives.
    double rank_sum = 0.0;
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t k = i; k < j; ++k) {
            if (labels[order[k]] == 1) {
                rank_sum += midrank;
                ++n_pos;
            }
        }
        i = j;
    }
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) throw DataError("AUC is undefined with a single class present");
    const double np = static_cast<double>(n_pos);
    return (rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

EvalReport metrics(const std::vector<double>& scores, const std::vector<int>& labels, double threshold) {
    EvalReport r;
    r.auc = auc(scores, labels);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool pred = scores[i] >= threshold;
        if (labels[i] == 1) {
            pred ? ++r.confusion.tp : ++r.confusion.fn;
        } else {
            pred ? ++r.confusion.fp : ++r.confusion.tn;
        }
    }
    const auto& c = r.confusion;
    r.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(scores.size());
    const std::size_t pred_pos = c.tp + c.fp, actual_pos = c.tp + c.fn;
    if (pred_pos > 0 && actual_pos > 0 && c.tp > 0) {
        const double precision = static_cast<double>(c.tp) / static_cast<double>(pred_pos);
        const double recall = static_cast<double>(c.tp) / static_cast<double>(actual_pos);
        r.f1 = 2.0 * precision * recall / (precision + recall);
    }
    return r;
}

std::string format_report(const EvalReport& r) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4) << "accuracy = " << r.accuracy << "\nf1 = " << r.f1
       << "\nauc = " << r.auc << "\ntp = " << r.confusion.tp << "\nfp = " << r.confusion.fp
       << "\ntn = " << r.confusion.tn << "\nfn = " << r.confusion.fn << "\nseed = " << r.seed << "\n";
    return os.str();
}

Optimizer::Optimizer(std::vector<Tensor> params, const TrainConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
    cfg_.validate();
    for (const Tensor& p : params_) {
        m_.emplace_back(p.numel(), 0.0f);
        if (cfg_.optimizer == OptimizerKind::adam) v_.emplace_back(p.numel(), 0.0f);
    }
}

void Optimizer::zero_grad() {
    for (Tensor& p : params_) {
        if (p.has_grad()) p.zero_grad();
    }
}

void Optimizer::step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        Tensor& p = params_[k];
        if (!p.has_grad()) continue;
        const auto g = p.grad();
        auto w = p.mutable_data();
        auto& m = m_[k];
        if (cfg_.optimizer == OptimizerKind::adam) {
            auto& v = v_[k];
            const auto b1 = static_cast<float>(cfg_.beta1), b2 = static_cast<float>(cfg_.beta2);
            for (std::size_t i = 0; i < w.size(); ++i) {
                m[i] = b1 * m[i] + (1.0f - b1) * g[i];
                v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
                const double m_hat = m[i] / bc1, v_hat = v[i] / bc2;
                w[i] -= static_cast<float>(lr * m_hat / (std::sqrt(v_hat) + cfg_.eps));
            }
        } else {
            const auto mu = static_cast<float>(cfg_.momentum);
            for (std::size_t i = 0; i < w.size(); ++i) {
                m[i] = mu * m[i] + g[i];
                w[i] -= static_cast<float>(lr * m[i]);
            }
        }
    }
}

double clip_grad_norm(std::vector<Tensor>& params, double max_norm) {
    double sq = 0.0;
    for (const Tensor& p : params) {
        for (float g : p.grad()) sq += static_cast<double>(g) * g;
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const auto factor = static_cast<float>(max_norm / (norm + 1e-12));
        for (Tensor& p : params) {
            if (!p.has_grad()) continue;
            for (float& g : p.mutable_grad()) g *= factor;
        }
    }
    return norm;
}

LabeledClips subset(const data::ClipSet& set, const std::vector<std::size_t>& indices) {
    LabeledClips out;
    for (std::size_t i : indices) {
        out.clips.push_back(set.clips.at(i));
        out.labels.push_back(set.labels.at(i));
    }
    return out;
}

Tensor make_batch(const std::vector<Tensor>& clips, const std::vector<std::size_t>& indices) {
    if (indices.empty()) throw DataError("make_batch: empty batch");
    const Shape& clip_shape = clips.at(indices.front()).shape();
    if (clip_shape.size() != 4 || clip_shape[0] != 1) {
        throw ShapeError("make_batch: clips must be [1,L,H,W], got " + shape_str(clip_shape));
    }
    const std::size_t per = shape_numel(clip_shape);
    std::vector<float> values(per * indices.size());
    for (std::size_t b = 0; b < indices.size(); ++b) {
        const Tensor& c = clips.at(indices[b]);
        if (c.shape() != clip_shape) throw ShapeError("make_batch: clip shapes differ");
        std::copy(c.data().begin(), c.data().end(), values.begin() + static_cast<std::ptrdiff_t>(b * per));
    }
    return Tensor({indices.size(), 1, clip_shape[1], clip_shape[2], clip_shape[3]}, std::move(values));
}

std::vector<double> predict(model::Model& model, const std::vector<Tensor>& clips, std::size_t batch_size) {
    NoGradGuard no_grad;
    std::vector<double> out;
    out.reserve(clips.size());
    for (std::size_t start = 0; start < clips.size(); start += batch_size) {
        std::vector<std::size_t> idx(std::min(batch_size, clips.size() - start));
        std::iota(idx.begin(), idx.end(), start);
        const Tensor logits = model.forward(make_batch(clips, idx), false);
        for (float z : logits.data()) out.push_back(1.0 / (1.0 + std::exp(-static_cast<double>(z))));
    }
    return out;
}

EvalReport evaluate(model::Model& model, const LabeledClips& set, std::size_t batch_size) {
    return metrics(predict(model, set.clips, batch_size), set.labels);
}

std::string log_header() { return "epoch,lr,train_loss,val_acc,val_f1,val_auc"; }

std::string format_log_row(const EpochLog& row) {
    std::ostringstream os;
    os << std::setprecision(6) << row.epoch << ',' << row.lr << ',' << row.train_loss << ','
       << row.val_acc << ',' << row.val_f1 << ',' << row.val_auc;
    return os.str();
}

namespace {

std::vector<std::vector<float>> snapshot(model::Model& model) {
    std::vector<std::vector<float>> out;
    model.visit([&](const std::string&, Tensor& t, bool) { out.emplace_back(t.data().begin(), t.data().end()); });
    return out;
}

void restore(model::Model& model, const std::vector<std::vector<float>>& saved) {
    std::size_t k = 0;
    model.visit([&](const std::string&, Tensor& t, bool) {
        std::copy(saved[k].begin(), saved[k].end(), t.mutable_data().begin());
        ++k;
    });
}

bool has_both_classes(const std::vector<int>& labels) {
    const bool pos = std::find(labels.begin(), labels.end(), 1) != labels.end();
    const bool neg = std::find(labels.begin(), labels.end(), 0) != labels.end();
    return pos && neg;
}

}  // namespace

TrainResult train(model::Model& model, const LabeledClips& train_set, const LabeledClips& val_set,
                  const TrainConfig& cfg, const std::function<void(const EpochLog&)>& on_epoch) {
    cfg.validate();
    if (train_set.size() == 0) throw DataError("training set is empty");
    if (train_set.labels.size() != train_set.size()) throw DataError("training labels do not match clips");

    std::vector<Tensor> params = model.parameters();
    Optimizer opt(params, cfg);
    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    const bool use_val = val_set.size() > 0 && has_both_classes(val_set.labels);

    TrainResult result;
    std::vector<std::vector<float>> best;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at(epoch, cfg);
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                               order.begin() + static_cast<std::ptrdiff_t>(end));
            std::vector<int> y;
            for (std::size_t i : idx) y.push_back(train_set.labels[i]);
            opt.zero_grad();
            const Tensor loss = bce_loss(model.forward(make_batch(train_set.clips, idx), true), y);
            const double value = loss.item();
            if (!std::isfinite(value)) {
                Tape::current().clear();
                throw DataError("non-finite training loss at epoch " + std::to_string(epoch));
            }
            backward(loss);
            if (cfg.grad_clip > 0.0) clip_grad_norm(params, cfg.grad_clip);
            opt.step(lr);
            loss_sum += value * static_cast<double>(idx.size());
        }

        EpochLog row;
        row.epoch = epoch;
        row.lr = lr;
        row.train_loss = loss_sum / static_cast<double>(order.size());
        if (use_val) {
            const EvalReport r = evaluate(model, val_set, cfg.batch_size);
            row.val_acc = r.accuracy;
            row.val_f1 = r.f1;
            row.val_auc = r.auc;
            if (result.best_epoch < 0 || r.auc > result.best_val_auc) {
                result.best_epoch = static_cast<long>(epoch);
                result.best_val_auc = r.auc;
                best = snapshot(model);
            }
        } else {
            row.val_acc = row.val_f1 = row.val_auc = std::numeric_limits<double>::quiet_NaN();
            result.best_epoch = static_cast<long>(epoch);
        }
        result.log.push_back(row);
        if (on_epoch) on_epoch(row);
    }
    if (use_val && !best.empty()) restore(model, best);
    return result;
}

}  // namespace mtsnet::train
