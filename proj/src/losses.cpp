#include "uadct/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "uadct/error.hpp"

namespace uadct {

namespace {

double safe_log(double p) { return std::log(std::max(p, kProbFloor)); }

void check_field(const ProbMap& p, const Field& w, const char* what) {
    if (w.batch() != p.batch() || w.height() != p.height() || w.width() != p.width()) {
        throw DimensionError(std::string(what) + ": weight map does not match " + p.shape_string());
    }
}

// Value of weighted CE and, when grad != nullptr, dL/dpred.
double weighted_ce_impl(const ProbMap& pred, const LabelMask& labels, const WeightMap& w, Tensor* grad) {
    if (labels.batch != pred.batch() || labels.height != pred.height() || labels.width != pred.width()) {
        throw DimensionError("weighted_ce: label mask does not match " + pred.shape_string());
    }
    check_field(pred, w, "weighted_ce");
    const int k = pred.channels();
    const std::size_t plane = pred.plane_size();
    std::size_t labeled = 0;
    for (auto l : labels.labels) {
        if (l == LabelMask::kUnlabeled) {
            continue;
        }
        if (l >= k) {
            throw LabelError("label " + std::to_string(l) + " >= num_classes " + std::to_string(k));
        }
        ++labeled;
    }
    if (labeled == 0) {
        throw LabelError("weighted_ce: every pixel is unlabeled");
    }
    const double inv = 1.0 / static_cast<double>(labeled);
    double total = 0.0;
    for (int n = 0; n < pred.batch(); ++n) {
        auto p = pred.item(n);
        for (std::size_t i = 0; i < plane; ++i) {
            const std::size_t li = n * plane + i;
            const auto l = labels.labels[li];
            if (l == LabelMask::kUnlabeled) {
                continue;
            }
            const double pl = p[l * plane + i];
            total += w[li] * -safe_log(pl);
            if (grad != nullptr && pl > kProbFloor) {
                grad->item(n)[l * plane + i] = -w[li] * inv / pl;
            }
        }
    }
    return total * inv;
}

double agreement_impl(const ProbMap& p, const ProbMap& q, const WeightMap* w, Field* per_pixel, Tensor* gp,
                      Tensor* gq) {
    if (!p.same_shape(q)) {
        throw DimensionError("js_divergence: " + p.shape_string() + " vs " + q.shape_string());
    }
    if (w != nullptr) {
        check_field(p, *w, "agreement_loss");
    }
    const int k = p.channels();
    const std::size_t plane = p.plane_size();
    const double inv = 1.0 / static_cast<double>(static_cast<std::size_t>(p.batch()) * plane);
    double total = 0.0;
    for (int n = 0; n < p.batch(); ++n) {
        auto pi = p.item(n);
        auto qi = q.item(n);
        for (std::size_t i = 0; i < plane; ++i) {
            const double weight = w ? (*w)[n * plane + i] : 1.0;
            double js = 0.0;
            for (int c = 0; c < k; ++c) {
                const double a = pi[c * plane + i];
                const double b = qi[c * plane + i];
                const double lm = safe_log(0.5 * (a + b));
                const double la = safe_log(a) - lm;
                const double lb = safe_log(b) - lm;
                if (a > 0.0) {
                    js += 0.5 * a * la;
                }
                if (b > 0.0) {
                    js += 0.5 * b * lb;
                }
                if (gp != nullptr) {
                    gp->item(n)[c * plane + i] = 0.5 * la * weight * inv;
                    gq->item(n)[c * plane + i] = 0.5 * lb * weight * inv;
                }
            }
            if (per_pixel != nullptr) {
                (*per_pixel)[n * plane + i] = js;
            }
            total += weight * js;
        }
    }
    return total * inv;
}

double cross_ce_impl(const ProbMap& t, const ProbMap& s, Tensor* grad) {
    if (!t.same_shape(s)) {
        throw DimensionError("cross_model_ce: " + t.shape_string() + " vs " + s.shape_string());
    }
    const double inv = 1.0 / static_cast<double>(static_cast<std::size_t>(t.batch()) * t.plane_size());
    double total = 0.0;
    auto td = t.data();
    auto sd = s.data();
    for (std::size_t i = 0; i < td.size(); ++i) {
        total -= td[i] * safe_log(sd[i]);
        if (grad != nullptr && sd[i] > kProbFloor) {
            grad->data()[i] = -td[i] * inv / sd[i];
        }
    }
    return total * inv;
}

double kl_impl(const ProbMap& t, const ProbMap& q, Tensor* grad) {
    if (!t.same_shape(q)) {
        throw DimensionError("kl_loss: " + t.shape_string() + " vs " + q.shape_string());
    }
    const double inv = 1.0 / static_cast<double>(static_cast<std::size_t>(t.batch()) * t.plane_size());
    double total = 0.0;
    auto td = t.data();
    auto qd = q.data();
    for (std::size_t i = 0; i < td.size(); ++i) {
        if (td[i] > 0.0) {
            total += td[i] * (safe_log(td[i]) - safe_log(qd[i]));
        }
        if (grad != nullptr && qd[i] > kProbFloor) {
            grad->data()[i] = -td[i] * inv / qd[i];
        }
    }
    return total * inv;
}

Tensor zeros_like(const Tensor& t) { return Tensor(t.batch(), t.channels(), t.height(), t.width()); }

}  // namespace

int LossWeights::resolved_ramp_epochs(int total_epochs) const {
    if (ramp_epochs) {
        return *ramp_epochs;
    }
    return static_cast<int>(std::lround(0.1 * total_epochs));
}

void LossWeights::validate() const {
    if (!(lambda_cot_max >= 0.0) || !(lambda_div_max >= 0.0)) {
        throw ConfigError("lambda maxima must be >= 0");
    }
    if (ramp_epochs && *ramp_epochs < 0) {
        throw ConfigError("ramp_epochs must be >= 0");
    }
}

LossNode weighted_ce(const ProbNode& pred, const LabelMask& labels, const WeightMap& w) {
    Tensor grad = zeros_like(pred.value());
    LossNode loss(weighted_ce_impl(pred.value(), labels, w, &grad));
    loss.accumulate(pred, grad);
    return loss;
}

double weighted_ce(const ProbMap& pred, const LabelMask& labels, const WeightMap& w) {
    return weighted_ce_impl(pred, labels, w, nullptr);
}

Field js_divergence(const ProbMap& p, const ProbMap& q) {
    Field out(p.batch(), p.height(), p.width());
    agreement_impl(p, q, nullptr, &out, nullptr, nullptr);
    return out;
}

LossNode agreement_loss(const ProbNode& p1, const ProbNode& p2, const WeightMap& w) {
    Tensor g1 = zeros_like(p1.value());
    Tensor g2 = zeros_like(p2.value());
    LossNode loss(agreement_impl(p1.value(), p2.value(), &w, nullptr, &g1, &g2));
    loss.accumulate(p1, g1);
    loss.accumulate(p2, g2);
    return loss;
}

double agreement_loss(const ProbMap& p1, const ProbMap& p2, const WeightMap& w) {
    return agreement_impl(p1, p2, &w, nullptr, nullptr, nullptr);
}

LossNode cross_model_ce(const ProbMap& target, const ProbNode& student) {
    Tensor grad = zeros_like(student.value());
    LossNode loss(cross_ce_impl(target, student.value(), &grad));
    loss.accumulate(student, grad);
    return loss;
}

double cross_model_ce(const ProbMap& target, const ProbMap& student) { return cross_ce_impl(target, student, nullptr); }

LossNode kl_loss(const ProbMap& target, const ProbNode& q) {
    Tensor grad = zeros_like(q.value());
    LossNode loss(kl_impl(target, q.value(), &grad));
    loss.accumulate(q, grad);
    return loss;
}

double kl_loss(const ProbMap& target, const ProbMap& q) { return kl_impl(target, q, nullptr); }

double mean_entropy(const ProbMap& p) {
    double total = 0.0;
    for (double v : p.data()) {
        if (v > 0.0) {
            total -= v * std::log(v);
        }
    }
    return total / static_cast<double>(static_cast<std::size_t>(p.batch()) * p.plane_size());
}

DiversityTerms diversity_loss(const SegModel& m1, const SegModel& m2, const MixedBatch& batch,
                              const AdversarialGenerator& adv, const DiversityOptions& opts) {
    const ImageBatch x = batch.images();
    if (x.batch() == 0) {
        throw DimensionError("diversity_loss: empty batch");
    }
    DiversityTerms out;
    out.adv_1 = adv.generate(m1, batch, opts.adv_seed_1);
    out.adv_2 = adv.generate(m2, batch, opts.adv_seed_2);
    out.target_1 = softmax(forward(m1, x, DropoutMode::off()));
    out.target_2 = softmax(forward(m2, x, DropoutMode::off()));

    const ProbNode student_2 = trace_forward(m2, out.adv_1, opts.student_mode_2);
    const ProbNode student_1 = trace_forward(m1, out.adv_2, opts.student_mode_1);
    LossNode teach_2 = cross_model_ce(out.target_1, student_2);
    LossNode teach_1 = cross_model_ce(out.target_2, student_1);
    out.teach_2 = teach_2.value();
    out.teach_1 = teach_1.value();
    out.loss = teach_2 + teach_1;
    return out;
}

LossNode total_loss(const LossNode& sup, const LossNode& agr, const LossNode& div, double lambda_cot,
                    double lambda_div) {
    LossNode out = sup;
    out += lambda_cot * agr;
    out += lambda_div * div;
    return out;
}

double total_loss(double sup, double agr, double div, double lambda_cot, double lambda_div) {
    return sup + lambda_cot * agr + lambda_div * div;
}

double lambda_rampup(int epoch, double lambda_max, int ramp_epochs) {
    if (ramp_epochs <= 0 || epoch >= ramp_epochs) {
        return lambda_max;
    }
    const double progress = static_cast<double>(std::max(epoch, 0)) / ramp_epochs;
    const double gap = 1.0 - progress;
    return lambda_max * std::exp(-5.0 * gap * gap);
}

}  // namespace uadct
