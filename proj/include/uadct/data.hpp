#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "uadct/tensor.hpp"

namespace uadct {

/// Seeded synthetic segmentation images: a disk (class 1) wrapped in a ring
/// (class 2) with an offset crescent (class 3) hugging the ring, over background 0.
struct SyntheticSpec {
    int n_images = 200;
    int height = 32;
    int width = 32;
    /// 2..4; lower counts drop the outer structures.
    int num_classes = 4;
    double noise_std = 0.1;
    std::uint64_t seed = 1;

    void validate() const;
};

/// Mean intensity of each class before noise.
double class_intensity(int cls);

struct Sample {
    /// Index of the sample in the list it was generated in.
    std::uint32_t id = 0;
    std::vector<float> image;
    /// Empty for unlabeled samples.
    std::vector<std::uint8_t> mask;

    bool labeled() const noexcept { return !mask.empty(); }
    friend bool operator==(const Sample&, const Sample&) = default;
};

/// A homogeneous list of samples (one split).
struct Dataset {
    int height = 0;
    int width = 0;
    int num_classes = 0;
    bool has_masks = true;
    std::vector<Sample> items;

    std::size_t size() const noexcept { return items.size(); }
    friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct SplitSpec {
    double label_ratio = 0.1;
    std::uint64_t split_seed = 2;

    void validate() const;
};

struct DatasetBundle {
    Dataset labeled_1;
    Dataset labeled_2;
    Dataset unlabeled;
    Dataset test;
    std::uint64_t data_seed = 0;
    std::uint64_t split_seed = 0;
    double label_ratio = 0.0;

    friend bool operator==(const DatasetBundle&, const DatasetBundle&) = default;
};

/// Throws GenerationError when the shapes cannot be placed on the canvas.
Dataset generate_synthetic(const SyntheticSpec& spec);

/// The first ceil(ratio * n) items of a seeded permutation keep their masks; the
/// rest lose them. Returns (labeled, unlabeled).
std::pair<Dataset, Dataset> apply_label_ratio(const Dataset& full, const SplitSpec& split);

/// Seeded shuffle split into halves of size ceil(m/2) and floor(m/2).
std::pair<Dataset, Dataset> split_labeled(const Dataset& labeled, std::uint64_t seed);

/// Generates n_train + n_test images from spec (n_images is ignored) and splits them.
DatasetBundle build_bundle(const SyntheticSpec& spec, int n_train, int n_test, const SplitSpec& split);

struct AugmentConfig {
    double flip_prob = 0.5;
    bool rotate = true;
    bool crop = true;
    double crop_fraction = 0.875;
};

/// Horizontal flip, k*90 degree rotation, random crop resized back (bilinear for the
/// image, nearest for the mask). The same geometry is applied to image and mask.
/// Rotations by 90/270 degrees are skipped for non-square images.
Sample augment(const Sample& sample, int height, int width, std::uint64_t seed, const AugmentConfig& cfg = {});

/// Batch helpers converting samples to model input.
ImageBatch to_image_batch(const Dataset& data, std::span<const std::size_t> indices);
ImageBatch to_image_batch(std::span<const Sample> samples, int height, int width);
LabelMask to_label_mask(std::span<const Sample> samples, int height, int width);

// Split file: "UASEGDAT", u32 version, u32 N, u32 H, u32 W, u32 K, u8 has_masks,
// N*H*W float32 intensities, then N*H*W u8 labels if has_masks. Little-endian.
inline constexpr std::uint32_t kDatasetVersion = 1;

std::vector<std::uint8_t> encode_split(const Dataset& data);
/// Sample ids are assigned 0..N-1 unless ids is given.
Dataset decode_split(std::span<const std::uint8_t> bytes, const std::vector<std::uint32_t>* ids = nullptr);

/// Writes labeled_1.bin, labeled_2.bin, unlabeled.bin, test.bin and manifest.json into dir.
void save_dataset(const DatasetBundle& bundle, const std::filesystem::path& dir);
DatasetBundle load_dataset(const std::filesystem::path& dir);

}  // namespace uadct
