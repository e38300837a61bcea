#pragma once

// Generators and reference implementations shared by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "uadct/metrics.hpp"
#include "uadct/rng.hpp"
#include "uadct/segnet.hpp"
#include "uadct/tensor.hpp"

namespace uadct::testing {

inline ImageBatch random_images(int n, int c, int h, int w, Rng& rng) {
    ImageBatch x(n, c, h, w);
    for (double& v : x.data()) {
        v = rng.uniform();
    }
    return x;
}

inline LabelMask random_labels(int n, int h, int w, int k, Rng& rng, double unlabeled_frac = 0.0) {
    LabelMask y(n, h, w);
    for (auto& v : y.labels) {
        v = rng.uniform() < unlabeled_frac ? LabelMask::kUnlabeled : static_cast<std::uint8_t>(rng.below(k));
    }
    return y;
}

/// Random per-pixel distributions with a tunable peakedness.
inline ProbMap random_probs(int n, int k, int h, int w, Rng& rng, double temperature = 1.0) {
    ProbMap p(n, k, h, w);
    for (int b = 0; b < n; ++b) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                double z = 0.0;
                for (int c = 0; c < k; ++c) {
                    p.at(b, c, y, x) = std::exp(rng.normal() / temperature);
                    z += p.at(b, c, y, x);
                }
                for (int c = 0; c < k; ++c) {
                    p.at(b, c, y, x) /= z;
                }
            }
        }
    }
    return p;
}

inline BinaryMask random_mask(int h, int w, double density, Rng& rng) {
    BinaryMask m(h, w);
    for (auto& v : m.pixels) {
        v = rng.uniform() < density ? 1 : 0;
    }
    return m;
}

/// Direct set counting.
inline double dsc_reference(const BinaryMask& s, const BinaryMask& g) {
    double inter = 0;
    double ns = 0;
    double ng = 0;
    for (std::size_t i = 0; i < s.pixels.size(); ++i) {
        ns += s.pixels[i] != 0;
        ng += g.pixels[i] != 0;
        inter += (s.pixels[i] != 0) && (g.pixels[i] != 0);
    }
    return ns + ng == 0 ? 1.0 : 2.0 * inter / (ns + ng);
}

/// Exhaustive pairwise distances.
inline double hd_reference(const BinaryMask& s, const BinaryMask& g, double spacing = 1.0) {
    std::vector<std::pair<int, int>> ps;
    std::vector<std::pair<int, int>> pg;
    for (int y = 0; y < s.height; ++y) {
        for (int x = 0; x < s.width; ++x) {
            if (s.pixels[static_cast<std::size_t>(y) * s.width + x]) {
                ps.emplace_back(y, x);
            }
            if (g.pixels[static_cast<std::size_t>(y) * g.width + x]) {
                pg.emplace_back(y, x);
            }
        }
    }
    if (ps.empty() && pg.empty()) {
        return 0.0;
    }
    if (ps.empty() || pg.empty()) {
        return std::hypot(static_cast<double>(s.height), s.width) * spacing;
    }
    auto directed = [](const auto& a, const auto& b) {
        double worst = 0.0;
        for (const auto& [ay, ax] : a) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& [by, bx] : b) {
                best = std::min(best, std::hypot(double(ay - by), double(ax - bx)));
            }
            worst = std::max(worst, best);
        }
        return worst;
    };
    return std::max(directed(ps, pg), directed(pg, ps)) * spacing;
}

/// Entropy of the mean distribution, computed independently of the library.
inline double entropy_reference(const std::vector<std::vector<double>>& samples) {
    const std::size_t k = samples.front().size();
    double h = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
        double mu = 0.0;
        for (const auto& s : samples) {
            mu += s[c];
        }
        mu /= static_cast<double>(samples.size());
        if (mu > 0.0) {
            h -= mu * std::log(mu);
        }
    }
    return h;
}

/// init_model with small random biases. Zero biases put ReLU units exactly on their kink
/// wherever the receptive field is all zeros, where finite differences are one-sided.
inline SegModel generic_model(const SegNetConfig& cfg, std::uint64_t seed) {
    SegModel m = init_model(cfg, seed);
    Rng rng(seed ^ 0xB1A5ULL);
    for (auto& p : m.params()) {
        if (p.dims.size() == 1) {
            for (float& v : p.values) {
                v = static_cast<float>(rng.uniform(-0.1, 0.1));
            }
        }
    }
    return m;
}

struct GradCheck {
    std::size_t checked = 0;
    std::size_t passed = 0;
    double worst = 0.0;

    double pass_fraction() const { return checked == 0 ? 1.0 : static_cast<double>(passed) / checked; }
    GradCheck& operator+=(const GradCheck& o) {
        checked += o.checked;
        passed += o.passed;
        worst = std::max(worst, o.worst);
        return *this;
    }
};

inline void record(GradCheck& out, double analytic, double numeric, double tol, double min_grad) {
    if (std::max(std::abs(analytic), std::abs(numeric)) <= min_grad) {
        return;
    }
    const double rel = std::abs(analytic - numeric) / std::max(std::abs(analytic), std::abs(numeric));
    ++out.checked;
    out.passed += rel < tol;
    out.worst = std::max(out.worst, rel);
}

/// Central differences on every parameter of `model` (which `loss` reads by reference).
/// Parameters are 32-bit, so the actual perturbed float values set the denominator.
template <typename LossFn>
GradCheck check_param_gradients(SegModel& model, const GradientSet& analytic, LossFn&& loss, double h = 1e-5,
                                double tol = 1e-3, double min_grad = 1e-8) {
    GradCheck out;
    auto params = model.params();
    for (std::size_t t = 0; t < params.size(); ++t) {
        auto& values = params[t].values;
        for (std::size_t i = 0; i < values.size(); ++i) {
            const float orig = values[i];
            const float up = static_cast<float>(orig + h);
            const float down = static_cast<float>(orig - h);
            values[i] = up;
            const double lp = loss();
            values[i] = down;
            const double lm = loss();
            values[i] = orig;
            const double numeric = (lp - lm) / (static_cast<double>(up) - static_cast<double>(down));
            record(out, analytic.grads[t][i], numeric, tol, min_grad);
        }
    }
    return out;
}

/// Central differences on every pixel of x (which `loss` reads by reference).
template <typename LossFn>
GradCheck check_input_gradient(ImageBatch& x, const ImageGradient& analytic, LossFn&& loss, double h = 1e-5,
                               double tol = 1e-3, double min_grad = 1e-8) {
    GradCheck out;
    auto data = x.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double orig = data[i];
        data[i] = orig + h;
        const double lp = loss();
        data[i] = orig - h;
        const double lm = loss();
        data[i] = orig;
        record(out, analytic.data()[i], (lp - lm) / (2 * h), tol, min_grad);
    }
    return out;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("uadct_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace uadct::testing
