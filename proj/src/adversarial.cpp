#include "uadct/adversarial.hpp"

#include <algorithm>
#include <cmath>

#include "uadct/error.hpp"
#include "uadct/losses.hpp"
#include "uadct/rng.hpp"

namespace uadct {

namespace {

void clamp_unit(ImageBatch& x) {
    for (double& v : x.data()) {
        v = std::clamp(v, 0.0, 1.0);
    }
}

double item_norm(std::span<const double> v) {
    double s = 0.0;
    for (double a : v) {
        s += a * a;
    }
    return std::sqrt(s);
}

}  // namespace

void AdvConfig::validate() const {
    if (!(eps_fgsm > 0.0) || !(eps_vat > 0.0)) {
        throw ConfigError("adversarial eps values must be > 0");
    }
    if (!(vat_xi > 0.0)) {
        throw ConfigError("vat_xi must be > 0");
    }
    if (vat_power_iters < 1) {
        throw ConfigError("vat_power_iters must be >= 1");
    }
}

ImageBatch fgsm(const SegModel& model, const ImageBatch& x, const LabelMask& y, double eps, bool clamp_to_unit) {
    if (std::none_of(y.labels.begin(), y.labels.end(), [](auto l) { return l != LabelMask::kUnlabeled; })) {
        throw LabelError("fgsm: labels contain no annotated pixel");
    }
    const ProbNode pred = trace_forward(model, x, DropoutMode::off());
    const LossNode ce = weighted_ce(pred, y, WeightMap(x.batch(), x.height(), x.width(), 1.0));
    const ImageGradient g = input_gradient(model, x, ce);
    ImageBatch out = x;
    auto o = out.data();
    auto gd = g.data();
    for (std::size_t i = 0; i < o.size(); ++i) {
        const double s = gd[i] > 0.0 ? 1.0 : (gd[i] < 0.0 ? -1.0 : 0.0);
        o[i] += eps * s;
    }
    if (clamp_to_unit) {
        clamp_unit(out);
    }
    return out;
}

ImageBatch vat_direction(const SegModel& model, const ImageBatch& x, const AdvConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    ImageBatch d(x.batch(), x.channels(), x.height(), x.width());
    for (double& v : d.data()) {
        v = rng.normal();
    }
    for (int n = 0; n < d.batch(); ++n) {
        auto item = d.item(n);
        const double norm = item_norm(item);
        for (double& v : item) {
            v /= norm;
        }
    }

    const ProbMap clean = softmax(forward(model, x, DropoutMode::off()));
    for (int it = 0; it < cfg.vat_power_iters; ++it) {
        ImageBatch probe = x;
        probe.axpy(cfg.vat_xi, d);
        const ProbNode q = trace_forward(model, probe, DropoutMode::off());
        const ImageGradient g = input_gradient(model, probe, kl_loss(clean, q));
        for (int n = 0; n < d.batch(); ++n) {
            auto gi = g.item(n);
            const double norm = item_norm(gi);
            // A vanishing gradient leaves this image's previous direction in place.
            if (!(norm > 0.0) || !std::isfinite(norm)) {
                continue;
            }
            auto di = d.item(n);
            for (std::size_t i = 0; i < di.size(); ++i) {
                di[i] = gi[i] / norm;
            }
        }
    }
    return d;
}

ImageBatch vat_perturb(const SegModel& model, const ImageBatch& x, const AdvConfig& cfg, std::uint64_t seed) {
    ImageBatch out = x;
    out.axpy(cfg.eps_vat, vat_direction(model, x, cfg, seed));
    if (cfg.clamp_to_unit) {
        clamp_unit(out);
    }
    return out;
}

FgsmVatGenerator::FgsmVatGenerator(AdvConfig cfg) : cfg_(cfg) { cfg_.validate(); }

ImageBatch FgsmVatGenerator::generate(const SegModel& model, const MixedBatch& batch, std::uint64_t seed) const {
    ImageBatch labeled;
    ImageBatch unlabeled;
    if (batch.labeled.batch() > 0) {
        labeled = fgsm(model, batch.labeled, batch.labels, cfg_.eps_fgsm, cfg_.clamp_to_unit);
    }
    if (batch.unlabeled.batch() > 0) {
        unlabeled = vat_perturb(model, batch.unlabeled, cfg_, seed);
    }
    return concat_batch(labeled, unlabeled);
}

}  // namespace uadct
