#pragma once

#include <cstdint>
#include <optional>

#include "uadct/adversarial.hpp"
#include "uadct/segnet.hpp"
#include "uadct/tensor.hpp"

namespace uadct {

/// Lower bound applied to every probability before taking its log.
inline constexpr double kProbFloor = 1e-12;

struct LossWeights {
    double lambda_cot_max = 1.0;
    double lambda_div_max = 0.5;
    /// Gaussian ramp length in epochs; unset means 10% of the run.
    std::optional<int> ramp_epochs;

    int resolved_ramp_epochs(int total_epochs) const;
    void validate() const;
};

/// Mean over labeled pixels of w * -ln p[label]. Sentinel pixels are skipped.
/// Throws LabelError for labels >= K or when every pixel is a sentinel.
LossNode weighted_ce(const ProbNode& pred, const LabelMask& labels, const WeightMap& w);
double weighted_ce(const ProbMap& pred, const LabelMask& labels, const WeightMap& w);

/// Per-pixel Jensen-Shannon divergence (natural log).
Field js_divergence(const ProbMap& p, const ProbMap& q);

/// Mean over pixels of w * JS(p1, p2); differentiable in both maps.
LossNode agreement_loss(const ProbNode& p1, const ProbNode& p2, const WeightMap& w);
double agreement_loss(const ProbMap& p1, const ProbMap& p2, const WeightMap& w);

/// Mean over pixels of -sum_c target_c ln student_c. The target is a constant.
LossNode cross_model_ce(const ProbMap& target, const ProbNode& student);
double cross_model_ce(const ProbMap& target, const ProbMap& student);

/// Mean over pixels of KL(target || q), target constant.
LossNode kl_loss(const ProbMap& target, const ProbNode& q);
double kl_loss(const ProbMap& target, const ProbMap& q);

/// Mean per-pixel entropy of a probability map.
double mean_entropy(const ProbMap& p);

struct DiversityOptions {
    /// Seeds for the adversarial generator aimed at each model.
    std::uint64_t adv_seed_1 = 0;
    std::uint64_t adv_seed_2 = 0;
    /// Dropout used for the student passes (the teachers always run with dropout off).
    DropoutMode student_mode_1 = DropoutMode::off();
    DropoutMode student_mode_2 = DropoutMode::off();
};

/// The two cross-model terms together with the frozen quantities they were built from.
struct DiversityTerms {
    LossNode loss;          // teach_2 + teach_1
    double teach_2 = 0.0;   // H(f1(x), f2(g1(x))): gradient reaches model 2 only
    double teach_1 = 0.0;   // H(f2(x), f1(g2(x))): gradient reaches model 1 only
    ImageBatch adv_1;       // g1(x), adversarial for model 1
    ImageBatch adv_2;       // g2(x)
    ProbMap target_1;       // f1(x), dropout off
    ProbMap target_2;       // f2(x)
};

DiversityTerms diversity_loss(const SegModel& m1, const SegModel& m2, const MixedBatch& batch,
                              const AdversarialGenerator& adv, const DiversityOptions& opts = {});

/// sup + lambda_cot * agr + lambda_div * div.
LossNode total_loss(const LossNode& sup, const LossNode& agr, const LossNode& div, double lambda_cot,
                    double lambda_div);
double total_loss(double sup, double agr, double div, double lambda_cot, double lambda_div);

/// Gaussian ramp-up: lambda_max * exp(-5 (1 - min(epoch, R)/R)^2); lambda_max when R == 0.
double lambda_rampup(int epoch, double lambda_max, int ramp_epochs);

}  // namespace uadct
