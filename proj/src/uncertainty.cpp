#include "uadct/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "uadct/error.hpp"

namespace uadct {

void UnsupNormConfig::validate() const {
    if (!(beta > 0.0)) {
        throw ConfigError("beta must be > 0");
    }
    if (!(c_norm > 0.0)) {
        throw ConfigError("c_norm must be > 0");
    }
}

std::vector<ProbMap> mc_sample(const SegModel& model, const ImageBatch& images, const McConfig& cfg) {
    if (cfg.passes < 2) {
        throw ConfigError("Monte Carlo sampling needs at least 2 passes");
    }
    std::vector<ProbMap> out;
    out.reserve(static_cast<std::size_t>(cfg.passes));
    for (int t = 0; t < cfg.passes; ++t) {
        out.push_back(softmax(forward(model, images, DropoutMode::on(cfg.base_seed + static_cast<std::uint64_t>(t)))));
    }
    return out;
}

UncertaintyMap predictive_entropy(std::span<const ProbMap> samples) {
    if (samples.size() < 2) {
        throw DimensionError("predictive entropy needs at least 2 samples");
    }
    const ProbMap& first = samples.front();
    for (const auto& s : samples) {
        if (!s.same_shape(first)) {
            throw DimensionError("sample shapes differ: " + s.shape_string() + " vs " + first.shape_string());
        }
    }
    const int k = first.channels();
    const std::size_t plane = first.plane_size();
    const double inv_t = 1.0 / static_cast<double>(samples.size());
    UncertaintyMap u(first.batch(), first.height(), first.width());
    std::vector<double> mu(static_cast<std::size_t>(k));
    for (int n = 0; n < first.batch(); ++n) {
        for (std::size_t i = 0; i < plane; ++i) {
            std::fill(mu.begin(), mu.end(), 0.0);
            for (const auto& s : samples) {
                auto item = s.item(n);
                for (int c = 0; c < k; ++c) {
                    mu[c] += item[c * plane + i];
                }
            }
            double h = 0.0;
            for (int c = 0; c < k; ++c) {
                const double m = mu[c] * inv_t;
                if (m > 0.0) {
                    h -= m * std::log(m);
                }
            }
            // Rounding in the mean can push h a hair outside [0, ln K].
            u[n * plane + i] = std::clamp(h, 0.0, std::log(static_cast<double>(k)));
        }
    }
    return u;
}

WeightMap sup_weight(const UncertaintyMap& u, bool active, double floor) {
    if (floor < 0.0) {
        throw ConfigError("supervised weight floor must be >= 0");
    }
    WeightMap w(u.batch(), u.height(), u.width(), 1.0);
    if (active) {
        for (std::size_t i = 0; i < u.size(); ++i) {
            w[i] = std::max(u[i], floor);
        }
    }
    return w;
}

WeightMap unsup_weight(const UncertaintyMap& u1, const UncertaintyMap& u2, const UnsupNormConfig& cfg,
                       bool active) {
    if (!u1.same_shape(u2)) {
        throw DimensionError("unsup_weight: uncertainty maps differ in shape");
    }
    WeightMap w(u1.batch(), u1.height(), u1.width(), 1.0);
    if (!active) {
        return w;
    }
    for (std::size_t i = 0; i < u1.size(); ++i) {
        const double mean_u = 0.5 * (u1[i] + u2[i]);
        w[i] = cfg.mode == UnsupWeightMode::kLiteral ? -cfg.beta * (mean_u + cfg.c_norm)
                                                     : std::max(0.0, cfg.beta * (cfg.c_norm - mean_u));
    }
    return w;
}

StageFlags schedule_active(int epoch, const UncertaintySchedule& sched) {
    return {epoch >= sched.sup_start_epoch, epoch >= sched.unsup_start_epoch};
}

std::vector<std::uint8_t> heatmap_pixels(const UncertaintyMap& u, int item, int k_classes) {
    if (k_classes < 2) {
        throw ConfigError("heatmap needs at least 2 classes");
    }
    const double max_entropy = std::log(static_cast<double>(k_classes));
    auto values = u.item(item);
    std::vector<std::uint8_t> px(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double level = std::floor(255.0 * (values[i] / max_entropy) + 0.5);
        px[i] = static_cast<std::uint8_t>(std::clamp(level, 0.0, 255.0));
    }
    return px;
}

void write_pgm(const std::filesystem::path& path, int height, int width, std::span<const std::uint8_t> pixels) {
    if (pixels.size() != static_cast<std::size_t>(height) * width) {
        throw DimensionError("write_pgm: pixel count does not match dimensions");
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot create " + path.string());
    }
    out << "P5\n" << width << ' ' << height << "\n255\n";
    out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    if (!out) {
        throw IoError("write failed: " + path.string());
    }
}

std::vector<std::filesystem::path> export_heatmap(const UncertaintyMap& u, int k_classes,
                                                  const std::filesystem::path& dir, std::string_view model_tag,
                                                  int epoch) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
    }
    std::vector<std::filesystem::path> paths;
    for (int n = 0; n < u.batch(); ++n) {
        auto path = dir / ("uncert_" + std::string(model_tag) + "_" + std::to_string(epoch) + "_" +
                           std::to_string(n) + ".pgm");
        write_pgm(path, u.height(), u.width(), heatmap_pixels(u, n, k_classes));
        paths.push_back(std::move(path));
    }
    return paths;
}

}  // namespace uadct
