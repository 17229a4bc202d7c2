#include "cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numeric>
#include <ostream>

#include "mtsnet/autograd.hpp"
#include "mtsnet/data.hpp"
#include "mtsnet/gradcheck.hpp"
#include "mtsnet/keyvalue.hpp"
#include "mtsnet/model.hpp"
#include "mtsnet/train.hpp"

namespace mtsnet::cli {
namespace {

namespace fs = std::filesystem;
using attn::AttentionKind;

struct ModelOptions {
    std::string model = "mtsnet";
    std::string attention;
    std::string variant;
    std::size_t n_head = 4;
    bool dep_embedding = true;
    std::size_t width_div = 1;
    std::size_t clip_size = 128;
    std::size_t frames = 12;
};

void add_model_options(CLI::App* app, ModelOptions& o) {
    app->add_option("--model", o.model, "mtsnet, r2p1d or r3d")->check(CLI::IsMember({"mtsnet", "r2p1d", "r3d"}));
    app->add_option("--attention", o.attention,
                    "none, dep_mhsa, mhsa3d, mhsa2p1d, vanilla_channel or vanilla_2p1d (layers 3 and 4)");
    app->add_option("--variant", o.variant, "DEP-MHSA Q/K/V recipe: A, B, C or D");
    app->add_option("--n-head", o.n_head, "attention heads")->capture_default_str();
    app->add_option("--dep-embedding", o.dep_embedding, "add position embeddings to the attention output")
        ->capture_default_str();
    app->add_option("--width-div", o.width_div, "divide every layer width by this factor")->capture_default_str();
    app->add_option("--clip-size", o.clip_size, "clip height and width in pixels")->capture_default_str();
    app->add_option("--frames", o.frames, "frames per clip")->capture_default_str();
}

model::ModelSpec build_spec(const ModelOptions& o, std::uint64_t seed) {
    model::ModelSpec s;
    AttentionKind kind = AttentionKind::none;
    if (o.model == "mtsnet") {
        kind = o.attention.empty() ? AttentionKind::dep_mhsa : attn::parse_attention_kind(o.attention);
        if (kind != AttentionKind::dep_mhsa) {
            throw ConfigError("--model mtsnet implies dep_mhsa attention; use --model r2p1d --attention " +
                              o.attention + " for other kinds");
        }
    } else {
        s.backbone = o.model == "r3d" ? model::Backbone::r3d : model::Backbone::r2plus1d;
        if (!o.attention.empty()) kind = attn::parse_attention_kind(o.attention);
    }
    if (!o.variant.empty() && kind != AttentionKind::dep_mhsa) {
        throw ConfigError("--variant applies only to dep_mhsa attention");
    }
    const attn::Variant variant = o.variant.empty() ? attn::Variant::A : attn::parse_variant(o.variant);
    if (kind != AttentionKind::none) s.with_attention({kind, variant, o.n_head, o.dep_embedding});
    s.with_width_divisor(o.width_div);
    s.frames = o.frames;
    s.height = s.width = o.clip_size;
    s.seed = seed;
    s.validate();
    return s;
}

std::string fixed(double v, int digits = 6) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

std::string subject_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "s%04zu", i);
    return buf;
}

/// Frame extent of the first subject and the block factor that brings it to
/// `clip_size`.
std::size_t downsample_factor(const fs::path& root, const std::vector<data::DatasetEntry>& entries,
                              std::size_t clip_size) {
    const data::SubjectRecord first = data::read_subject(root, entries.front());
    if (first.slices.empty()) throw DataError("subject '" + first.subject_id + "' has no frames");
    const std::size_t extent = first.slices.front().dim(0);
    if (extent < clip_size || extent % clip_size != 0) {
        throw DataError("frames are " + std::to_string(extent) + " pixels wide; cannot reduce them to " +
                        std::to_string(clip_size));
    }
    return extent / clip_size;
}

data::ClipSet load_dataset(const fs::path& root, const model::ModelSpec& spec, std::ostream& err) {
    const auto entries = data::read_labels(root);
    const std::size_t factor = downsample_factor(root, entries, spec.height);
    const std::size_t threads = data::loader_threads();
    err << "loading " << entries.size() << " subjects from " << root.string() << " (" << threads << " threads)\n";
    return data::load_clips(root, spec.frames, factor, threads);
}

int cmd_synth(const fs::path& out_dir, std::size_t subjects, double pos_frac, std::uint64_t seed, std::size_t size,
              const std::string& format, std::ostream& out, std::ostream& err) {
    if (!(pos_frac >= 0.0 && pos_frac <= 1.0)) throw ConfigError("--pos-frac must be in [0, 1]");
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec || !std::ofstream(out_dir / "labels.csv")) {
        throw ConfigError("cannot write to " + out_dir.string() + (ec ? ": " + ec.message() : ""));
    }
    const auto frame_format = format == "pgm" ? data::FrameFormat::pgm : data::FrameFormat::mtsv;
    nn::SeedStream seeds(seed);
    std::vector<data::DatasetEntry> entries;
    std::size_t positives = 0;
    for (std::size_t i = 0; i < subjects; ++i) {
        // Spreads the positives evenly: floor(N * F) of them in total.
        const auto label = static_cast<int>(std::floor(static_cast<double>(i + 1) * pos_frac) -
                                            std::floor(static_cast<double>(i) * pos_frac));
        data::SubjectRecord rec = data::synth_subject(seeds.next(), label, size);
        rec.subject_id = subject_name(i);
        data::write_subject(out_dir, rec, frame_format);
        entries.push_back({rec.subject_id, label, rec.modality});
        positives += static_cast<std::size_t>(label);
    }
    data::write_labels(out_dir, entries);
    err << "wrote " << subjects << " subjects to " << out_dir.string() << "\n";
    out << "subjects = " << subjects << "\npositives = " << positives << "\nnegatives = " << subjects - positives
        << "\n";
    return kOk;
}

int cmd_preprocess(const fs::path& in_dir, const fs::path& out_dir, const data::PreprocessSpec& spec, std::ostream& out,
                   std::ostream& err) {
    const auto entries = data::read_labels(in_dir);
    for (const auto& e : entries) {
        data::SubjectRecord rec = data::read_subject(in_dir, e);
        if (rec.slices.size() < data::kMinFrames || rec.slices.size() > data::kMaxFrames) {
            throw DataError("subject '" + e.subject_id + "' has " + std::to_string(rec.slices.size()) + " frames");
        }
        for (Tensor& s : rec.slices) s = data::preprocess_slice(s, spec);
        data::write_subject(out_dir, rec, data::FrameFormat::mtsv);
    }
    data::write_labels(out_dir, entries);
    err << "preprocessed " << entries.size() << " subjects into " << out_dir.string() << "\n";
    out << "subjects = " << entries.size() << "\n";
    return kOk;
}

struct TrainOptions {
    fs::path data;
    fs::path out;
    fs::path log;
    train::TrainConfig cfg;
    std::string optimizer = "adam";
    std::size_t test_n = 100;
    std::uint64_t split_seed = 0;
    bool split_seed_given = false;
};

int cmd_train(const ModelOptions& mo, TrainOptions& to, std::ostream& out, std::ostream& err) {
    to.cfg.optimizer = train::parse_optimizer(to.optimizer);
    to.cfg.validate();
    const model::ModelSpec spec = build_spec(mo, to.cfg.seed);
    const std::uint64_t split_seed = to.split_seed_given ? to.split_seed : to.cfg.seed;

    const data::ClipSet set = load_dataset(to.data, spec, err);
    const data::Split split = data::split_dataset(set.labels, to.test_n, split_seed);
    const train::LabeledClips train_set = train::subset(set, split.train);
    const train::LabeledClips val_set = train::subset(set, split.val);
    err << "split: " << split.train.size() << " train, " << split.val.size() << " val, " << split.test.size()
        << " test\n";

    std::error_code ec;
    fs::create_directories(to.out, ec);
    if (ec) throw CheckpointError("cannot create " + to.out.string() + ": " + ec.message());
    const fs::path log_path = to.log.empty() ? to.out / "train_log.csv" : to.log;
    std::ofstream log(log_path);
    if (!log) throw ConfigError("cannot write " + log_path.string());
    log << train::log_header() << "\n" << std::flush;

    model::Model m(spec);
    const train::TrainResult result = train::train(m, train_set, val_set, to.cfg, [&](const train::EpochLog& row) {
        const std::string line = train::format_log_row(row);
        log << line << "\n" << std::flush;
        err << line << "\n";
    });

    KeyValues extra{{"data.test_n", std::to_string(to.test_n)}, {"data.split_seed", std::to_string(split_seed)}};
    for (auto& kv : train::config_to_entries(to.cfg)) extra.push_back(kv);
    extra.emplace_back("result.best_epoch", std::to_string(result.best_epoch));
    extra.emplace_back("result.best_val_auc", fixed(result.best_val_auc));
    model::save_checkpoint(to.out, m, extra);

    out << "checkpoint = " << to.out.string() << "\nepochs = " << result.log.size()
        << "\nbest_epoch = " << result.best_epoch << "\nbest_val_auc = " << fixed(result.best_val_auc) << "\n";
    return kOk;
}

std::size_t manifest_uint(const std::map<std::string, std::string>& m, const std::string& key) {
    const auto it = m.find(key);
    if (it == m.end()) throw CheckpointError("checkpoint manifest lacks '" + key + "'");
    try {
        return std::stoull(it->second);
    } catch (const std::exception&) {
        throw CheckpointError("checkpoint manifest: bad value for '" + key + "'");
    }
}

int cmd_eval(const fs::path& data_dir, const fs::path& ckpt_dir, const std::string& split_name, std::size_t batch,
             std::ostream& out, std::ostream& err) {
    model::Checkpoint ck = model::load_checkpoint(ckpt_dir);
    const data::ClipSet set = load_dataset(data_dir, ck.model->spec(), err);
    std::vector<std::size_t> indices;
    if (split_name == "all") {
        indices.resize(set.clips.size());
        std::iota(indices.begin(), indices.end(), 0);
    } else {
        const data::Split split = data::split_dataset(set.labels, manifest_uint(ck.manifest, "data.test_n"),
                                                      manifest_uint(ck.manifest, "data.split_seed"));
        indices = split_name == "test" ? split.test : split_name == "val" ? split.val : split.train;
    }
    train::EvalReport report = train::evaluate(*ck.model, train::subset(set, indices), batch);
    report.seed = ck.model->spec().seed;
    out << "split = " << split_name << "\nsubjects = " << indices.size() << "\n" << train::format_report(report);
    return kOk;
}

int cmd_params(const ModelOptions& mo, std::ostream& out) {
    model::Model m(build_spec(mo, 0));
    const model::ParamCount pc = model::count_parameters(m);
    for (const auto& g : pc.groups) out << std::left << std::setw(24) << g.name << " " << g.count << "\n";
    out << std::left << std::setw(24) << "total" << " " << pc.total << "\n";
    return kOk;
}

int cmd_gradcheck(const std::string& op, std::size_t trials, double tolerance, std::uint64_t seed, double step,
                  std::ostream& out) {
    std::vector<std::string> ops = op == "all" ? gradcheck::registered_names() : std::vector<std::string>{op};
    bool ok = true;
    for (const auto& name : ops) {
        const gradcheck::Summary s = gradcheck::run(name, trials, tolerance, seed, step);
        const bool pass = s.passed == s.trials;
        ok = ok && pass;
        out << (pass ? "PASS " : "FAIL ") << s.op << " trials=" << s.trials << " passed=" << s.passed
            << " redrawn=" << s.redrawn << " worst_rel_error=" << std::scientific << std::setprecision(3)
            << s.worst_rel_error << std::defaultfloat << "\n";
    }
    return ok ? kOk : kFailure;
}

int cmd_selftest(std::ostream& out) {
    std::vector<std::pair<std::string, std::function<bool()>>> checks{
        {"hu_window edges",
         [] { return data::hu_window(-50.0) == 0.0f && data::hu_window(50.0) == 128.0f && data::hu_window(150.0) == 255.0f; }},
        {"center_crop offsets",
         [] {
             std::vector<float> v(25);
             std::iota(v.begin(), v.end(), 0.0f);
             return data::center_crop(Tensor(Shape{5, 5}, v), 2, 2).at({0, 0}) == 6.0f;
         }},
        {"metrics worked example",
         [] {
             const auto r = train::metrics({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1});
             return r.auc == 0.75 && r.accuracy == 0.75 && std::abs(r.f1 - 2.0 / 3.0) < 1e-12;
         }},
        {"synthetic area-ratio oracle",
         [] {
             for (std::uint64_t s = 0; s < 20; ++s) {
                 if (data::bright_area_ratio(data::synth_subject(s, 1, 64)) >= 0.5) return false;
                 if (data::bright_area_ratio(data::synth_subject(s, 0, 64)) < 0.5) return false;
             }
             return true;
         }},
        {"small model forward",
         [] {
             model::ModelSpec s = model::ModelSpec::mtsnet();
             s.with_width_divisor(16);
             s.height = s.width = 16;
             model::Model m(s);
             NoGradGuard guard;
             return m.forward(Tensor(Shape{1, 1, 12, 16, 16}, 0.5f), false).shape() == Shape{1, 1};
         }},
    };
    for (const auto& name : gradcheck::registered_names()) {
        checks.emplace_back("gradcheck " + name, [name] {
            const auto s = gradcheck::run(name, 3, 1e-3, 1);
            return s.passed == s.trials;
        });
    }
    bool ok = true;
    for (const auto& [name, check] : checks) {
        const bool pass = check();
        ok = ok && pass;
        out << (pass ? "PASS " : "FAIL ") << name << "\n";
    }
    return ok ? kOk : kFailure;
}

/// Splices `key = value` lines from --config into the argument list right
/// after the subcommand, so that explicit flags (parsed later) win.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
    std::vector<std::string> out;
    std::string config;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            config = args[++i];
        } else if (args[i].rfind("--config=", 0) == 0) {
            config = args[i].substr(9);
        } else {
            out.push_back(args[i]);
        }
    }
    if (config.empty() || out.empty()) return out;
    std::vector<std::string> spliced{out.front()};
    for (const auto& [key, value] : read_key_values(config)) {
        if (key == "config") throw ConfigError(config + ": config files cannot nest");
        spliced.push_back("--" + key);
        spliced.push_back(value);
    }
    spliced.insert(spliced.end(), out.begin() + 1, out.end());
    return spliced;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app("May-Thurner CT clip classifier: data synthesis, training and evaluation", "mtsnet");
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    app.require_subcommand(1, 1);
    const std::string config_help = "key = value file; keys are long flag names, flags win";
    std::string config_unused;

    auto* synth = app.add_subcommand("synth", "write a synthetic dataset");
    fs::path synth_out;
    std::size_t synth_n = 0, synth_size = 128;
    double pos_frac = 0.5;
    std::uint64_t synth_seed = 0;
    std::string synth_format = "mtsv";
    synth->add_option("--out", synth_out, "dataset directory")->required();
    synth->add_option("--subjects", synth_n, "number of subjects")->required();
    synth->add_option("--pos-frac", pos_frac, "fraction of positive subjects")->capture_default_str();
    synth->add_option("--seed", synth_seed)->capture_default_str();
    synth->add_option("--size", synth_size, "frame height and width")->capture_default_str();
    synth->add_option("--format", synth_format)->check(CLI::IsMember({"mtsv", "pgm"}))->capture_default_str();
    synth->add_option("--config", config_unused, config_help);

    auto* prep = app.add_subcommand("preprocess", "window, crop and downsample raw HU frames");
    fs::path prep_in, prep_out;
    data::PreprocessSpec prep_spec;
    prep->add_option("--in", prep_in, "dataset of raw HU frames (MTSV)")->required();
    prep->add_option("--out", prep_out, "output dataset directory")->required();
    prep->add_option("--window-center", prep_spec.window.center)->capture_default_str();
    prep->add_option("--window-width", prep_spec.window.width)->capture_default_str();
    prep->add_option("--crop", prep_spec.crop, "center crop extent")->capture_default_str();
    prep->add_option("--downsample", prep_spec.downsample, "block-average factor after cropping")
        ->capture_default_str();
    prep->add_option("--config", config_unused, config_help);

    auto* tr = app.add_subcommand("train", "train a model and write a checkpoint directory");
    ModelOptions train_model;
    TrainOptions to;
    add_model_options(tr, train_model);
    tr->add_option("--data", to.data, "dataset directory")->required();
    tr->add_option("--out", to.out, "checkpoint directory")->required();
    tr->add_option("--epochs", to.cfg.epochs)->capture_default_str();
    tr->add_option("--batch", to.cfg.batch_size)->capture_default_str();
    tr->add_option("--lr", to.cfg.lr0, "initial learning rate")->capture_default_str();
    tr->add_option("--decay-factor", to.cfg.decay_factor)->capture_default_str();
    tr->add_option("--decay-every", to.cfg.decay_every, "epochs between learning-rate decays")->capture_default_str();
    tr->add_option("--optimizer", to.optimizer)->check(CLI::IsMember({"adam", "sgd"}))->capture_default_str();
    tr->add_option("--grad-clip", to.cfg.grad_clip, "global gradient-norm limit, 0 disables")->capture_default_str();
    tr->add_option("--seed", to.cfg.seed, "weight init and batch order")->capture_default_str();
    auto* split_seed_opt = tr->add_option("--split-seed", to.split_seed, "data split seed (default: --seed)");
    tr->add_option("--test-n", to.test_n, "held-out test subjects, half per class")->capture_default_str();
    tr->add_option("--log", to.log, "epoch log path (default: <out>/train_log.csv)");
    tr->add_option("--config", config_unused, config_help);

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
    fs::path eval_data, eval_ckpt;
    std::string eval_split = "test";
    std::size_t eval_batch = 8;
    ev->add_option("--data", eval_data, "dataset directory")->required();
    ev->add_option("--ckpt", eval_ckpt, "checkpoint directory")->required();
    ev->add_option("--split", eval_split)->check(CLI::IsMember({"test", "val", "train", "all"}))->capture_default_str();
    ev->add_option("--batch", eval_batch)->capture_default_str();
    ev->add_option("--config", config_unused, config_help);

    auto* pa = app.add_subcommand("params", "itemized learnable-parameter counts");
    ModelOptions params_model;
    add_model_options(pa, params_model);
    pa->add_option("--config", config_unused, config_help);

    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient check of a registered op");
    std::string gc_op;
    std::size_t gc_trials = 20;
    double gc_tol = 1e-3, gc_step = 1e-3;
    std::uint64_t gc_seed = 0;
    std::vector<std::string> op_names = gradcheck::registered_names();
    op_names.push_back("all");
    gc->add_option("--op", gc_op, "op name or 'all'")->required()->check(CLI::IsMember(op_names));
    gc->add_option("--trials", gc_trials)->capture_default_str();
    gc->add_option("--tolerance", gc_tol, "relative error bound")->capture_default_str();
    gc->add_option("--step", gc_step, "central-difference step")->capture_default_str();
    gc->add_option("--seed", gc_seed)->capture_default_str();
    gc->add_option("--config", config_unused, config_help);

    auto* st = app.add_subcommand("selftest", "quick internal consistency checks");

    try {
        std::vector<std::string> argv = expand_config(args);
        std::reverse(argv.begin(), argv.end());
        try {
            app.parse(argv);
        } catch (const CLI::ParseError& e) {
            const int code = app.exit(e, out, err);
            return code == 0 ? kOk : kUsage;
        }
        to.split_seed_given = split_seed_opt->count() > 0;

        if (synth->parsed()) return cmd_synth(synth_out, synth_n, pos_frac, synth_seed, synth_size, synth_format, out, err);
        if (prep->parsed()) return cmd_preprocess(prep_in, prep_out, prep_spec, out, err);
        if (tr->parsed()) return cmd_train(train_model, to, out, err);
        if (ev->parsed()) return cmd_eval(eval_data, eval_ckpt, eval_split, eval_batch, out, err);
        if (pa->parsed()) return cmd_params(params_model, out);
        if (gc->parsed()) return cmd_gradcheck(gc_op, gc_trials, gc_tol, gc_seed, gc_step, out);
        if (st->parsed()) return cmd_selftest(out);
        return kUsage;
    } catch (const CheckpointError& e) {
        err << "checkpoint error: " << e.what() << "\n";
        return kCheckpoint;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << "\n";
        return kData;
    } catch (const std::invalid_argument& e) {
        // ConfigError and ShapeError.
        err << "configuration error: " << e.what() << "\n";
        return kUsage;
    } catch (const fs::filesystem_error& e) {
        err << "filesystem error: " << e.what() << "\n";
        return kData;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kFailure;
    }
}

}  // namespace mtsnet::cli
