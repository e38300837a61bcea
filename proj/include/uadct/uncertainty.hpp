#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string_view>
#include <vector>

#include "uadct/segnet.hpp"
#include "uadct/tensor.hpp"

namespace uadct {

struct McConfig {
    /// Number of stochastic forward passes T.
    int passes = 8;
    std::uint64_t base_seed = 0;
};

/// Epoch from which each uncertainty stage is switched on. kNever disables a stage.
struct UncertaintySchedule {
    static constexpr int kNever = std::numeric_limits<int>::max();

    int sup_start_epoch = 0;
    int unsup_start_epoch = 20;

    friend bool operator==(const UncertaintySchedule&, const UncertaintySchedule&) = default;
};

enum class UnsupWeightMode {
    /// w = -beta * (mean_u + c_norm), exactly as the published normalization reads.
    kLiteral,
    /// w = max(0, beta * (c_norm - mean_u)); confident pixels weigh more.
    kRectified,
};

struct UnsupNormConfig {
    double beta = 0.7;
    double c_norm = 2.0;
    UnsupWeightMode mode = UnsupWeightMode::kRectified;

    void validate() const;
};

struct StageFlags {
    bool sup_active = false;
    bool unsup_active = false;
};

/// T softmax maps; pass t runs with DropoutMode::on(base_seed + t). Throws
/// ConfigError when passes < 2.
std::vector<ProbMap> mc_sample(const SegModel& model, const ImageBatch& images, const McConfig& cfg);

/// Entropy of the mean distribution over samples, per pixel, in nats. 0 ln 0 is 0.
UncertaintyMap predictive_entropy(std::span<const ProbMap> samples);

/// All-ones when inactive, otherwise max(u, floor).
WeightMap sup_weight(const UncertaintyMap& u, bool active, double floor = 0.1);

/// Weight for the agreement loss from the two models' maps (averaged first).
WeightMap unsup_weight(const UncertaintyMap& u1, const UncertaintyMap& u2, const UnsupNormConfig& cfg,
                       bool active);

StageFlags schedule_active(int epoch, const UncertaintySchedule& sched);

/// 8-bit grey levels round(255 * u / ln K), clamped, for one batch item.
std::vector<std::uint8_t> heatmap_pixels(const UncertaintyMap& u, int item, int k_classes);

/// Binary PGM (P5, maxval 255).
void write_pgm(const std::filesystem::path& path, int height, int width, std::span<const std::uint8_t> pixels);

/// Writes uncert_{model}_{epoch}_{index}.pgm per batch item into dir; returns the paths.
std::vector<std::filesystem::path> export_heatmap(const UncertaintyMap& u, int k_classes,
                                                  const std::filesystem::path& dir, std::string_view model_tag,
                                                  int epoch);

}  // namespace uadct
