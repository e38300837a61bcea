#pragma once

#include <cstdint>

#include "uadct/segnet.hpp"
#include "uadct/tensor.hpp"

namespace uadct {

struct AdvConfig {
    double eps_fgsm = 0.03;
    /// L2 radius per image, in raw pixel units.
    double eps_vat = 10.0;
    double vat_xi = 10.0;
    int vat_power_iters = 1;
    bool clamp_to_unit = true;

    void validate() const;
};

/// Labeled and unlabeled items drawn for one diversity step. Either part may be empty.
struct MixedBatch {
    ImageBatch labeled;
    LabelMask labels;
    ImageBatch unlabeled;

    /// labeled items first, then unlabeled.
    ImageBatch images() const { return concat_batch(labeled, unlabeled); }
};

/// x + eps * sign(dCE/dx) with dropout off; sign(0) = 0. Optionally clamped to [0,1].
/// Throws LabelError when y has no labeled pixel.
ImageBatch fgsm(const SegModel& model, const ImageBatch& x, const LabelMask& y, double eps, bool clamp_to_unit = true);

/// Unit-L2 (per image) direction found by power iteration on KL(p(x) || p(x + xi d)).
/// Falls back to the previous direction for an image whose gradient vanishes.
ImageBatch vat_direction(const SegModel& model, const ImageBatch& x, const AdvConfig& cfg, std::uint64_t seed);

/// x + eps_vat * vat_direction, optionally clamped to [0,1].
ImageBatch vat_perturb(const SegModel& model, const ImageBatch& x, const AdvConfig& cfg, std::uint64_t seed);

/// Produces g(x): an adversarial version of a mixed batch aimed at one model.
class AdversarialGenerator {
public:
    virtual ~AdversarialGenerator() = default;
    /// Output items follow MixedBatch::images() order.
    virtual ImageBatch generate(const SegModel& model, const MixedBatch& batch, std::uint64_t seed) const = 0;
};

/// FGSM on labeled items, VAT on unlabeled items.
class FgsmVatGenerator final : public AdversarialGenerator {
public:
    explicit FgsmVatGenerator(AdvConfig cfg);
    ImageBatch generate(const SegModel& model, const MixedBatch& batch, std::uint64_t seed) const override;
    const AdvConfig& config() const noexcept { return cfg_; }

private:
    AdvConfig cfg_;
};

}  // namespace uadct
