#include "mtsnet/data.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <numbers>
#include <random>
#include <sstream>
#include <thread>

#include "mtsnet/serialize.hpp"

namespace mtsnet::data {
namespace fs = std::filesystem;

std::string to_string(Modality m) { return m == Modality::ct ? "ct" : "enhanced_ct"; }

Modality parse_modality(const std::string& name) {
    if (name == "ct") return Modality::ct;
    if (name == "enhanced_ct") return Modality::enhanced_ct;
    throw DataError("unknown modality '" + name + "'");
}

float hu_window(double hu, const WindowSpec& w) {
    if (!(w.width > 0.0)) throw ConfigError("window width must be positive");
    const double low = w.center - w.width / 2.0;
    const double v = std::clamp((hu - low) / w.width, 0.0, 1.0);
    return static_cast<float>(std::floor(255.0 * v + 0.5));
}

Tensor hu_window(const Tensor& hu, const WindowSpec& w) {
    std::vector<float> out(hu.numel());
    const auto in = hu.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = hu_window(static_cast<double>(in[i]), w);
    return Tensor(hu.shape(), std::move(out));
}

namespace {

void require_image(const Tensor& img, const char* what) {
    if (!img.defined() || img.rank() != 2) {
        throw ShapeError(std::string(what) + ": expected an [H,W] image, got " +
                         (img.defined() ? shape_str(img.shape()) : std::string("undefined")));
    }
}

}  // namespace

Tensor center_crop(const Tensor& img, std::size_t h, std::size_t w) {
    require_image(img, "center_crop");
    const std::size_t H = img.dim(0), W = img.dim(1);
    if (h == 0 || w == 0 || h > H || w > W) {
        throw ShapeError("center_crop: window " + std::to_string(h) + "x" + std::to_string(w) +
                         " does not fit " + shape_str(img.shape()));
    }
    const std::size_t top = (H - h) / 2, left = (W - w) / 2;
    std::vector<float> out(h * w);
    const auto in = img.data();
    for (std::size_t y = 0; y < h; ++y) {
        std::copy_n(in.begin() + static_cast<std::ptrdiff_t>((top + y) * W + left), w,
                    out.begin() + static_cast<std::ptrdiff_t>(y * w));
    }
    return Tensor({h, w}, std::move(out));
}

Tensor downsample_mean(const Tensor& img, std::size_t factor) {
    require_image(img, "downsample_mean");
    if (factor == 0) throw ShapeError("downsample_mean: factor must be >= 1");
    const std::size_t H = img.dim(0), W = img.dim(1);
    if (H % factor != 0 || W % factor != 0) {
        throw ShapeError("downsample_mean: " + shape_str(img.shape()) + " not divisible by " +
                         std::to_string(factor));
    }
    if (factor == 1) return img.clone();
    const std::size_t h = H / factor, w = W / factor;
    std::vector<double> acc(h * w, 0.0);
    const auto in = img.data();
    for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) acc[(y / factor) * w + x / factor] += in[y * W + x];
    }
    const double inv = 1.0 / static_cast<double>(factor * factor);
    std::vector<float> out(h * w);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(acc[i] * inv);
    return Tensor({h, w}, std::move(out));
}

Tensor preprocess_slice(const Tensor& hu, const PreprocessSpec& spec) {
    require_image(hu, "preprocess_slice");
    return downsample_mean(center_crop(hu_window(hu, spec.window), spec.crop, spec.crop), spec.downsample);
}

Tensor assemble_clip(const SubjectRecord& s, std::size_t l_target, std::size_t downsample) {
    const std::size_t n = s.slices.size();
    if (n < kMinFrames || n > kMaxFrames) {
        throw DataError("subject '" + s.subject_id + "' has " + std::to_string(n) + " frames, expected " +
                        std::to_string(kMinFrames) + "-" + std::to_string(kMaxFrames));
    }
    if (l_target < n) {
        throw DataError("subject '" + s.subject_id + "' has more frames than the clip length " +
                        std::to_string(l_target));
    }
    const Shape frame_shape = s.slices.front().shape();
    if (frame_shape.size() != 2) throw DataError("subject '" + s.subject_id + "': frames must be [H,W]");
    std::vector<Tensor> frames;
    frames.reserve(n);
    for (const Tensor& f : s.slices) {
        if (f.shape() != frame_shape) {
            throw DataError("subject '" + s.subject_id + "': frame shapes differ (" + shape_str(frame_shape) +
                            " vs " + shape_str(f.shape()) + ")");
        }
        frames.push_back(downsample == 1 ? f : downsample_mean(f, downsample));
    }
    const std::size_t h = frames.front().dim(0), w = frames.front().dim(1), plane = h * w;
    std::vector<float> out(l_target * plane);
    for (std::size_t l = 0; l < l_target; ++l) {
        const auto src = frames[std::min(l, n - 1)].data();
        for (std::size_t i = 0; i < plane; ++i) out[l * plane + i] = src[i] / 255.0f;
    }
    return Tensor({1, l_target, h, w}, std::move(out));
}

namespace {

constexpr std::size_t kSynthFrames = 12;
constexpr std::size_t kVeinFirst = 4;
constexpr std::size_t kVeinLast = 9;

/// Bilinear upsampling of a (g x g) grid of uniform values to size x size.
std::vector<double> smooth_field(std::mt19937_64& rng, std::size_t size, std::size_t g) {
    std::uniform_real_distribution<double> u(0.3, 0.7);
    std::vector<double> grid(g * g);
    for (double& v : grid) v = u(rng);
    std::vector<double> out(size * size);
    const double scale = static_cast<double>(g - 1) / static_cast<double>(size - 1);
    for (std::size_t y = 0; y < size; ++y) {
        const double gy = static_cast<double>(y) * scale;
        const std::size_t y0 = std::min(static_cast<std::size_t>(gy), g - 2);
        const double fy = gy - static_cast<double>(y0);
        for (std::size_t x = 0; x < size; ++x) {
            const double gx = static_cast<double>(x) * scale;
            const std::size_t x0 = std::min(static_cast<std::size_t>(gx), g - 2);
            const double fx = gx - static_cast<double>(x0);
            const double top = grid[y0 * g + x0] * (1 - fx) + grid[y0 * g + x0 + 1] * fx;
            const double bot = grid[(y0 + 1) * g + x0] * (1 - fx) + grid[(y0 + 1) * g + x0 + 1] * fx;
            out[y * size + x] = top * (1 - fy) + bot * fy;
        }
    }
    return out;
}

}  // namespace

SubjectRecord synth_subject(std::uint64_t seed, int label, std::size_t size) {
    if (label != 0 && label != 1) throw DataError("synth_subject: label must be 0 or 1");
    if (size < 16) throw ConfigError("synth_subject: size must be >= 16");
    std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(label) + 1);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };

    const double s = static_cast<double>(size);
    const double cx = s / 2 + uniform(-0.08, 0.08) * s;
    const double cy = s / 2 + uniform(-0.08, 0.08) * s;
    const double major = uniform(0.11, 0.14) * s;
    const double minor = uniform(0.08, 0.10) * s;
    const double angle = uniform(-0.3, 0.3);
    const double squeeze = label == 1 ? uniform(0.2, 0.45) : uniform(0.7, 1.0);
    const std::size_t squeeze_first = 5 + static_cast<std::size_t>(u01(rng) * 2.0);  // 5 or 6
    const double ca = std::cos(angle), sa = std::sin(angle);
    const std::size_t grid = std::max<std::size_t>(3, size / 16 + 1);

    SubjectRecord rec;
    rec.subject_id = (label == 1 ? "pos_" : "neg_") + std::to_string(seed);
    rec.label = label;
    rec.modality = Modality::ct;

    std::vector<double> field = smooth_field(rng, size, grid);
    for (std::size_t f = 0; f < kSynthFrames; ++f) {
        if (f > 0) {
            const auto fresh = smooth_field(rng, size, grid);
            for (std::size_t i = 0; i < field.size(); ++i) field[i] = 0.7 * field[i] + 0.3 * fresh[i];
        }
        std::vector<float> px(size * size);
        for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<float>(std::floor(255.0 * field[i] + 0.5));
        if (f >= kVeinFirst && f <= kVeinLast) {
            const bool squeezed = f >= squeeze_first && f < squeeze_first + 3;
            const double b = minor * (squeezed ? squeeze : 1.0);
            for (std::size_t y = 0; y < size; ++y) {
                for (std::size_t x = 0; x < size; ++x) {
                    const double dx = static_cast<double>(x) + 0.5 - cx;
                    const double dy = static_cast<double>(y) + 0.5 - cy;
                    const double u = (dx * ca + dy * sa) / major;
                    const double v = (-dx * sa + dy * ca) / b;
                    if (u * u + v * v <= 1.0) px[y * size + x] = 230.0f;
                }
            }
        }
        rec.slices.emplace_back(Shape{size, size}, std::move(px));
    }
    return rec;
}

double bright_area_ratio(const SubjectRecord& s, float threshold) {
    std::size_t lo = 0, hi = 0;
    for (const Tensor& f : s.slices) {
        const auto px = f.data();
        const auto n = static_cast<std::size_t>(std::count_if(px.begin(), px.end(), [&](float v) { return v >= threshold; }));
        if (n == 0) continue;
        lo = lo == 0 ? n : std::min(lo, n);
        hi = std::max(hi, n);
    }
    return hi == 0 ? 1.0 : static_cast<double>(lo) / static_cast<double>(hi);
}

Split split_dataset(const std::vector<int>& labels, std::size_t test_n, std::uint64_t seed) {
    if (test_n % 2 != 0) throw DataError("split_dataset: test size must be even");
    std::vector<std::size_t> by_class[2];
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1) throw DataError("split_dataset: labels must be 0 or 1");
        by_class[labels[i]].push_back(i);
    }
    const std::size_t per_class = test_n / 2;
    std::mt19937_64 rng(seed);
    Split out;
    for (int c = 0; c < 2; ++c) {
        auto& idx = by_class[c];
        // Leave at least one training subject per class after the test draw.
        if (idx.size() < per_class + 1) {
            throw DataError("split_dataset: class " + std::to_string(c) + " has " + std::to_string(idx.size()) +
                            " subjects, need at least " + std::to_string(per_class + 1));
        }
        std::shuffle(idx.begin(), idx.end(), rng);
        const std::size_t rest = idx.size() - per_class;
        const auto n_val = static_cast<std::size_t>(std::lround(0.1 * static_cast<double>(rest)));
        out.test.insert(out.test.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(per_class));
        auto val_begin = idx.begin() + static_cast<std::ptrdiff_t>(per_class);
        out.val.insert(out.val.end(), val_begin, val_begin + static_cast<std::ptrdiff_t>(n_val));
        out.train.insert(out.train.end(), val_begin + static_cast<std::ptrdiff_t>(n_val), idx.end());
    }
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.val.begin(), out.val.end());
    std::sort(out.test.begin(), out.test.end());
    return out;
}

namespace {

std::string frame_name(std::size_t i, FrameFormat format) {
    std::ostringstream os;
    os << "frame_" << std::setw(3) << std::setfill('0') << i << (format == FrameFormat::mtsv ? ".mtsv" : ".pgm");
    return os.str();
}

void check_subject_id(const std::string& id) {
    if (id.empty() || id.find_first_of("/\\,\n\r") != std::string::npos || id == "." || id == "..") {
        throw DataError("invalid subject id '" + id + "'");
    }
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

void write_pgm(const fs::path& path, const Tensor& frame) {
    require_image(frame, "write_pgm");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write " + path.string());
    os << "P5\n" << frame.dim(1) << " " << frame.dim(0) << "\n255\n";
    std::string bytes(frame.numel(), '\0');
    const auto px = frame.data();
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        bytes[i] = static_cast<char>(static_cast<unsigned char>(std::clamp(std::lround(px[i]), 0L, 255L)));
    }
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw DataError("failed writing " + path.string());
}

Tensor read_pgm(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open " + path.string());
    auto token = [&]() {
        std::string t;
        char c;
        while (is.get(c)) {
            if (c == '#') {
                std::string skip;
                std::getline(is, skip);
            } else if (std::isspace(static_cast<unsigned char>(c))) {
                if (!t.empty()) break;
            } else {
                t.push_back(c);
            }
        }
        return t;
    };
    if (token() != "P5") throw DataError(path.string() + ": not a binary PGM (P5)");
    std::size_t w = 0, h = 0, maxval = 0;
    try {
        w = std::stoul(token());
        h = std::stoul(token());
        maxval = std::stoul(token());
    } catch (const std::exception&) {
        throw DataError(path.string() + ": malformed PGM header");
    }
    if (w == 0 || h == 0 || maxval != 255) throw DataError(path.string() + ": unsupported PGM (need maxval 255)");
    std::string bytes(w * h, '\0');
    is.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (static_cast<std::size_t>(is.gcount()) != bytes.size()) throw DataError(path.string() + ": truncated PGM");
    std::vector<float> px(bytes.size());
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<unsigned char>(bytes[i]);
    return Tensor({h, w}, std::move(px));
}

void write_subject(const fs::path& root, const SubjectRecord& s, FrameFormat format) {
    check_subject_id(s.subject_id);
    const fs::path dir = root / s.subject_id;
    fs::create_directories(dir);
    for (std::size_t i = 0; i < s.slices.size(); ++i) {
        if (format == FrameFormat::mtsv) {
            save_mtsv(dir / frame_name(i, format), s.slices[i]);
        } else {
            write_pgm(dir / frame_name(i, format), s.slices[i]);
        }
    }
}

void write_labels(const fs::path& root, const std::vector<DatasetEntry>& entries) {
    fs::create_directories(root);
    std::ofstream os(root / "labels.csv");
    if (!os) throw DataError("cannot write " + (root / "labels.csv").string());
    os << "subject_id,label,modality\n";
    for (const auto& e : entries) {
        check_subject_id(e.subject_id);
        os << e.subject_id << "," << e.label << "," << to_string(e.modality) << "\n";
    }
}

std::vector<DatasetEntry> read_labels(const fs::path& root) {
    const fs::path path = root / "labels.csv";
    std::ifstream is(path);
    if (!is) throw DataError("cannot open " + path.string());
    std::string line;
    if (!std::getline(is, line) || trim(line) != "subject_id,label,modality") {
        throw DataError(path.string() + ": expected header 'subject_id,label,modality'");
    }
    std::vector<DatasetEntry> out;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, ',')) fields.push_back(trim(f));
        const std::string where = path.string() + ":" + std::to_string(lineno);
        if (fields.size() != 3) throw DataError(where + ": expected 3 fields");
        DatasetEntry e;
        e.subject_id = fields[0];
        check_subject_id(e.subject_id);
        if (fields[1] == "0") {
            e.label = 0;
        } else if (fields[1] == "1") {
            e.label = 1;
        } else {
            throw DataError(where + ": label must be 0 or 1, got '" + fields[1] + "'");
        }
        e.modality = parse_modality(fields[2]);
        out.push_back(std::move(e));
    }
    if (out.empty()) throw DataError(path.string() + ": no subjects");
    return out;
}

SubjectRecord read_subject(const fs::path& root, const DatasetEntry& entry) {
    const fs::path dir = root / entry.subject_id;
    if (!fs::is_directory(dir)) throw DataError("missing subject directory " + dir.string());
    SubjectRecord rec;
    rec.subject_id = entry.subject_id;
    rec.label = entry.label;
    rec.modality = entry.modality;
    for (std::size_t i = 0;; ++i) {
        const fs::path mtsv = dir / frame_name(i, FrameFormat::mtsv);
        const fs::path pgm = dir / frame_name(i, FrameFormat::pgm);
        if (fs::exists(mtsv)) {
            rec.slices.push_back(load_mtsv(mtsv));
        } else if (fs::exists(pgm)) {
            rec.slices.push_back(read_pgm(pgm));
        } else {
            break;
        }
    }
    return rec;
}

std::size_t loader_threads() {
    if (const char* env = std::getenv("MTSNET_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v >= 1) return static_cast<std::size_t>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

ClipSet load_clips(const fs::path& root, std::size_t l_target, std::size_t downsample, std::size_t threads) {
    ClipSet set;
    set.entries = read_labels(root);
    const std::size_t n = set.entries.size();
    set.clips.resize(n);
    set.labels.resize(n);
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    auto work = [&]() {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                set.clips[i] = assemble_clip(read_subject(root, set.entries[i]), l_target, downsample);
                set.labels[i] = set.entries[i].label;
            } catch (...) {
                std::lock_guard lock(failure_mu);
                if (!failure) failure = std::current_exception();
                next = n;
            }
        }
    };
    const std::size_t workers = std::clamp<std::size_t>(threads, 1, n);
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < workers; ++t) pool.emplace_back(work);
    work();
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
    return set;
}

}  // namespace mtsnet::data
