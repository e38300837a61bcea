#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "uadct/tensor.hpp"

namespace uadct {

/// Row-major binary mask (nonzero = foreground).
struct BinaryMask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> pixels;

    BinaryMask() = default;
    BinaryMask(int h, int w) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w, 0) {}

    std::size_t count() const noexcept;
    bool empty() const noexcept { return count() == 0; }
};

/// Dice coefficient in [0,1]. Both empty -> 1, exactly one empty -> 0.
double dsc(const BinaryMask& s, const BinaryMask& g);

/// Length of the image diagonal; the Hausdorff penalty when exactly one mask is empty.
double diagonal_penalty(int height, int width);

/// Exact symmetric Hausdorff distance between foreground pixel sets, in pixels
/// times spacing. Both empty -> 0; exactly one empty -> diagonal_penalty * spacing.
double hd(const BinaryMask& s, const BinaryMask& g, double spacing = 1.0);

/// Exact squared Euclidean distance from every pixel to the nearest foreground pixel.
/// Pixels of an all-background mask get +infinity.
std::vector<double> squared_distance_transform(const BinaryMask& m);

enum class EnsembleMode { kAvg, kVot };

const char* to_string(EnsembleMode mode);

struct MetricsReport {
    EnsembleMode mode = EnsembleMode::kAvg;
    /// Foreground classes only, DSC in percent.
    std::map<int, double> per_class_dsc;
    std::map<int, double> per_class_hd;
    double mean_dsc = 0.0;
    double mean_hd = 0.0;

    friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

/// Per foreground class c in 1..K-1: DSC and HD per image, averaged over the batch;
/// mean_* averages the classes.
MetricsReport per_class_report(const LabelMask& pred, const LabelMask& gt, int num_classes, double spacing = 1.0);

/// Soft vote: argmax of (p1 + p2) / 2, ties to the lowest class.
LabelMask ensemble_vote(const ProbMap& p1, const ProbMap& p2);

/// Arithmetic mean of every metric across reports.
MetricsReport avg_individual(std::span<const MetricsReport> reports);

struct SeedStat {
    double mean = 0.0;
    /// Sample standard deviation (n - 1); 0 for a single run.
    double std = 0.0;
};

SeedStat seed_stat(std::span<const double> values);

/// mean(std) of each metric across runs.
struct AggregateReport {
    EnsembleMode mode = EnsembleMode::kAvg;
    std::map<int, SeedStat> per_class_dsc;
    std::map<int, SeedStat> per_class_hd;
    SeedStat mean_dsc;
    SeedStat mean_hd;
    std::size_t runs = 0;
};

AggregateReport aggregate_runs(std::span<const MetricsReport> runs);

/// One CSV row per (class, report): run_seed,method,mode,class,dsc,hd. class "mean" carries the means.
struct MetricsRow {
    std::uint64_t run_seed = 0;
    std::string method;
    MetricsReport report;
};

std::string metrics_csv(std::span<const MetricsRow> rows);

/// "12.34(0.56)" as in published mean(std) tables.
std::string format_mean_std(const SeedStat& s);

}  // namespace uadct
