#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mtsnet/tensor.hpp"

namespace mtsnet::data {

enum class Modality { ct, enhanced_ct };

std::string to_string(Modality m);
/// Throws DataError for anything but "ct" / "enhanced_ct".
Modality parse_modality(const std::string& name);

/// One subject: an ordered stack of [H,W] grayscale frames (0..255) and a
/// binary label (1 = more than 50% area stenosis).
struct SubjectRecord {
    std::string subject_id;
    std::vector<Tensor> slices;
    int label = 0;
    Modality modality = Modality::ct;
};

constexpr std::size_t kMinFrames = 10;
constexpr std::size_t kMaxFrames = 12;

struct WindowSpec {
    double center = 50.0;
    double width = 200.0;
};

/// round(255 * clamp((hu - (center - width/2)) / width, 0, 1)), halves rounded up.
float hu_window(double hu, const WindowSpec& w = {});
Tensor hu_window(const Tensor& hu, const WindowSpec& w = {});

/// Window of h x w at offset (floor((H-h)/2), floor((W-w)/2)) of an [H,W]
/// image. Throws ShapeError when the window does not fit.
Tensor center_crop(const Tensor& img, std::size_t h, std::size_t w);

/// Mean over non-overlapping factor x factor blocks of an [H,W] image.
Tensor downsample_mean(const Tensor& img, std::size_t factor);

struct PreprocessSpec {
    WindowSpec window;
    std::size_t crop = 256;
    std::size_t downsample = 2;
};

/// Raw HU slice -> windowed, center-cropped, block-averaged 8-bit frame.
Tensor preprocess_slice(const Tensor& hu, const PreprocessSpec& spec = {});

/// [1, l_target, H/f, W/f] clip scaled to [0,1]. Subjects with fewer than
/// l_target frames repeat their last frame. Throws DataError unless the
/// record holds 10-12 equally sized frames.
Tensor assemble_clip(const SubjectRecord& s, std::size_t l_target = 12, std::size_t downsample = 1);

/// 12 frames of smoothed noise (0.3-0.7 of full scale) with a bright
/// ellipse in frames 4-9. On three consecutive middle frames the ellipse's
/// minor axis is scaled by a factor in [0.2, 0.45] for label 1 and
/// [0.7, 1.0] for label 0. Pure function of (seed, label, size).
SubjectRecord synth_subject(std::uint64_t seed, int label, std::size_t size = 128);

/// Pixels at or above `threshold` per frame; ratio of the smallest nonzero
/// count to the largest. 1.0 when no frame has such pixels.
double bright_area_ratio(const SubjectRecord& s, float threshold = 200.0f);

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
    std::vector<std::size_t> test;
};

/// Test gets test_n/2 subjects of each class drawn by `seed`; the rest is
/// split 90/10 into train/val per class. Indices refer to `labels` and are
/// sorted within each part. Throws DataError when a class is too small.
Split split_dataset(const std::vector<int>& labels, std::size_t test_n, std::uint64_t seed);

enum class FrameFormat { mtsv, pgm };

/// Root directory with labels.csv (subject_id,label,modality) and one
/// directory per subject holding frame_000.<ext> ...
struct DatasetEntry {
    std::string subject_id;
    int label = 0;
    Modality modality = Modality::ct;
};

void write_subject(const std::filesystem::path& root, const SubjectRecord& s, FrameFormat format = FrameFormat::mtsv);
void write_labels(const std::filesystem::path& root, const std::vector<DatasetEntry>& entries);
/// Throws DataError on a missing or malformed labels.csv.
std::vector<DatasetEntry> read_labels(const std::filesystem::path& root);
/// Reads frame_###.mtsv or frame_###.pgm (P5, maxval 255) in index order.
SubjectRecord read_subject(const std::filesystem::path& root, const DatasetEntry& entry);

/// Single-frame 8-bit PGM (P5) I/O.
void write_pgm(const std::filesystem::path& path, const Tensor& frame);
Tensor read_pgm(const std::filesystem::path& path);

struct ClipSet {
    std::vector<DatasetEntry> entries;
    std::vector<Tensor> clips;
    std::vector<int> labels;
};

/// Worker count for parallel loading: MTSNET_THREADS when set (>= 1),
/// otherwise the hardware concurrency.
std::size_t loader_threads();

/// Loads and assembles every subject listed in labels.csv, in file order,
/// using up to `threads` workers.
ClipSet load_clips(const std::filesystem::path& root, std::size_t l_target, std::size_t downsample,
                   std::size_t threads);

}  // namespace mtsnet::data
