#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mtsnet/data.hpp"
#include "mtsnet/keyvalue.hpp"
#include "mtsnet/model.hpp"

namespace mtsnet::train {

/// Mean binary cross-entropy of logits [N,1] (or [N]) against 0/1 labels,
/// evaluated as max(z,0) - z*y + log(1 + exp(-|z|)). Throws DataError for
/// labels outside {0,1} and ShapeError when the counts differ.
template <typename T>
BasicTensor<T> bce_loss(const BasicTensor<T>& logits, const std::vector<int>& labels);

enum class OptimizerKind { adam, sgd };

std::string to_string(OptimizerKind k);
OptimizerKind parse_optimizer(const std::string& name);

struct TrainConfig {
    double lr0 = 5e-4;
    double decay_factor = 0.2;
    std::size_t decay_every = 25;
    std::size_t epochs = 100;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
    OptimizerKind optimizer = OptimizerKind::adam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double momentum = 0.9;
    /// Global gradient-norm limit; 0 disables clipping.
    double grad_clip = 5.0;

    /// ConfigError on lr0 < 0, decay_factor outside (0,1], zero batch size
    /// or zero decay period.
    void validate() const;
};

KeyValues config_to_entries(const TrainConfig& cfg);
/// Reads `train.*` keys; keys that are absent keep `base` values.
TrainConfig config_from_entries(const std::map<std::string, std::string>& kv, TrainConfig base = {});

/// lr0 * decay_factor^floor(epoch / decay_every).
double lr_at(std::size_t epoch, const TrainConfig& cfg);

struct Confusion {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t tn = 0;
    std::size_t fn = 0;
};

struct EvalReport {
    double accuracy = 0.0;
    double f1 = 0.0;
    double auc = 0.0;
    Confusion confusion;
    std::uint64_t seed = 0;
};

/// Mann-Whitney AUC with half credit for ties, from midranks.
/// Throws DataError unless both classes are present.
double auc(const std::vector<double>& scores, const std::vector<int>& labels);

/// Predictions are scores >= threshold; pass probabilities. F1 is 0 when
/// precision or recall is undefined. Throws DataError on empty or
/// single-class input, mismatched sizes or labels outside {0,1}.
EvalReport metrics(const std::vector<double>& scores, const std::vector<int>& labels, double threshold = 0.5);

std::string format_report(const EvalReport& r);

/// Adam or momentum SGD over a fixed parameter list (the handles share
/// storage with the model).
class Optimizer {
public:
    Optimizer(std::vector<Tensor> params, const TrainConfig& cfg);

    void zero_grad();
    /// One update with learning rate `lr`; parameters without a gradient
    /// buffer are skipped.
    void step(double lr);

private:
    std::vector<Tensor> params_;
    TrainConfig cfg_;
    std::vector<std::vector<float>> m_;
    std::vector<std::vector<float>> v_;
    std::size_t t_ = 0;
};

/// Scales every gradient so the global L2 norm is at most `max_norm`.
/// Returns the norm before scaling.
double clip_grad_norm(std::vector<Tensor>& params, double max_norm);

struct LabeledClips {
    std::vector<Tensor> clips;
    std::vector<int> labels;

    std::size_t size() const { return clips.size(); }
};

LabeledClips subset(const data::ClipSet& set, const std::vector<std::size_t>& indices);

/// Stacks [1,L,H,W] clips into [B,1,L,H,W].
Tensor make_batch(const std::vector<Tensor>& clips, const std::vector<std::size_t>& indices);

/// sigma(logit) per clip, eval mode, no gradient recording.
std::vector<double> predict(model::Model& model, const std::vector<Tensor>& clips, std::size_t batch_size = 8);

EvalReport evaluate(model::Model& model, const LabeledClips& set, std::size_t batch_size = 8);

struct EpochLog {
    std::size_t epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double val_acc = 0.0;
    double val_f1 = 0.0;
    double val_auc = 0.0;
};

std::string log_header();
std::string format_log_row(const EpochLog& row);

struct TrainResult {
    std::vector<EpochLog> log;
    /// Epoch whose weights the model holds on return; -1 when no epoch ran.
    long best_epoch = -1;
    double best_val_auc = 0.0;
};

/// Seeded shuffled mini-batches, one optimizer step per batch. After each
/// epoch the validation set is scored; the weights (and BN buffers) of the
/// epoch with the highest validation AUC are restored at the end. Without a
/// usable validation set (empty or one class) the last epoch is kept.
/// Throws DataError on an empty training set or a non-finite loss.
TrainResult train(model::Model& model, const LabeledClips& train_set, const LabeledClips& val_set,
                  const TrainConfig& cfg, const std::function<void(const EpochLog&)>& on_epoch = {});

}  // namespace mtsnet::train
