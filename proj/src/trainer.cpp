#include "uadct/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "binary_io.hpp"
#include "uadct/error.hpp"
#include "uadct/report_json.hpp"
#include "uadct/rng.hpp"

namespace uadct {

namespace {

using json = nlohmann::ordered_json;

// Purpose tags mixed into derive_seed so every random stream is independent.
constexpr std::uint64_t kInitTag = 0x1417;
constexpr std::uint64_t kDropTag = 0xD50F;
constexpr std::uint64_t kMcTag = 0x3C3C;
constexpr std::uint64_t kAugTag = 0xA116;
constexpr std::uint64_t kAdvTag = 0xADF5;
constexpr std::uint64_t kUnlabeledOrderTag = 0x0DE5;
constexpr std::uint64_t kLabeledOrderTag = 0x1AB5;
constexpr std::uint64_t kTestTag = 0x7E57;

constexpr int kEvalChunk = 32;
constexpr const char* kStateFile = "trainer_state.json";
constexpr const char* kStateFormat = "uadct-trainer-state";
constexpr int kStateVersion = 1;

void require_finite(double v, const std::string& what, int epoch, int iteration) {
    if (!std::isfinite(v)) {
        throw NumericError("non-finite " + what + " at epoch " + std::to_string(epoch) + ", iteration " +
                           std::to_string(iteration));
    }
}

void require_finite_params(const SegModel& m, int model, int epoch, int iteration) {
    for (const auto& p : m.params()) {
        if (!std::all_of(p.values.begin(), p.values.end(), [](float v) { return std::isfinite(v); })) {
            throw NumericError("non-finite parameter " + p.name + " (model " + std::to_string(model + 1) +
                               ") after update at epoch " + std::to_string(epoch) + ", iteration " +
                               std::to_string(iteration));
        }
    }
}

WeightMap ones_like(const ImageBatch& x) { return WeightMap(x.batch(), x.height(), x.width(), 1.0); }

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(std::span<std::size_t>(p));
    return p;
}

void check_split(const Dataset& d, const SegNetConfig& m, const char* name) {
    if (d.items.empty()) {
        return;
    }
    if (d.height % m.size_multiple() != 0 || d.width % m.size_multiple() != 0) {
        throw DimensionError(std::string(name) + " images are " + std::to_string(d.height) + "x" +
                             std::to_string(d.width) + ", not divisible by " + std::to_string(m.size_multiple()));
    }
    if (d.num_classes != m.num_classes) {
        throw DimensionError(std::string(name) + " has " + std::to_string(d.num_classes) + " classes, model has " +
                             std::to_string(m.num_classes));
    }
}

Dataset merged(const Dataset& a, const Dataset& b) {
    Dataset out = a;
    out.items.insert(out.items.end(), b.items.begin(), b.items.end());
    return out;
}

struct Batch {
    ImageBatch images;
    LabelMask labels;
};

}  // namespace

std::string_view to_string(Method m) {
    switch (m) {
        case Method::kPart:
            return "part";
        case Method::kIndependent:
            return "independent";
        case Method::kDct:
            return "dct";
        case Method::kOurs:
            return "ours";
        case Method::kSupUncOnly:
            return "sup-unc";
        case Method::kUnsupUncOnly:
            return "unsup-unc";
    }
    return "?";
}

Method parse_method(std::string_view name) {
    for (Method m : {Method::kPart, Method::kIndependent, Method::kDct, Method::kOurs, Method::kSupUncOnly,
                     Method::kUnsupUncOnly}) {
        if (to_string(m) == name) {
            return m;
        }
    }
    throw ConfigError("unknown method '" + std::string(name) +
                      "' (expected part, independent, dct, ours, sup-unc or unsup-unc)");
}

void TrainConfig::validate() const {
    if (epochs < 1) {
        throw ConfigError("epochs must be >= 1");
    }
    if (batch_size_labeled < 1 || batch_size_unlabeled < 1) {
        throw ConfigError("batch sizes must be >= 1");
    }
    model.validate();
    if (mc.passes < 2) {
        throw ConfigError("mc_passes must be >= 2");
    }
    if (schedule.sup_start_epoch < 0 || schedule.unsup_start_epoch < 0) {
        throw ConfigError("uncertainty start epochs must be >= 0");
    }
    unsup_norm.validate();
    if (!(sup_weight_floor >= 0.0)) {
        throw ConfigError("sup_weight_floor must be >= 0");
    }
    weights.validate();
    adv.validate();
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        throw ConfigError("learning_rate must be a positive number");
    }
    if (lr_decay_every < 0) {
        throw ConfigError("lr_decay_every must be >= 0");
    }
    if (!(lr_decay_factor > 0.0 && lr_decay_factor <= 1.0)) {
        throw ConfigError("lr_decay_factor must be in (0, 1]");
    }
    if (!(augmentation.flip_prob >= 0.0 && augmentation.flip_prob <= 1.0)) {
        throw ConfigError("aug_flip_prob must be in [0, 1]");
    }
    if (!(augmentation.crop_fraction > 0.0 && augmentation.crop_fraction <= 1.0)) {
        throw ConfigError("aug_crop_fraction must be in (0, 1]");
    }
    if (uncertainty_log_every < 0 || heatmap_every < 0 || heatmap_count < 0) {
        throw ConfigError("logging intervals and heatmap_count must be >= 0");
    }
}

UncertaintySchedule TrainConfig::effective_schedule() const {
    constexpr int never = UncertaintySchedule::kNever;
    switch (method) {
        case Method::kOurs:
            return schedule;
        case Method::kSupUncOnly:
            return {schedule.sup_start_epoch, never};
        case Method::kUnsupUncOnly:
            return {never, schedule.unsup_start_epoch};
        default:
            return {never, never};
    }
}

std::optional<double> EpochLog::mean_test_uncertainty() const {
    if (!test_uncertainty) {
        return std::nullopt;
    }
    return 0.5 * ((*test_uncertainty)[0] + (*test_uncertainty)[1]);
}

Evaluation evaluate(std::span<const SegModel> models, const Dataset& test, double spacing) {
    if (models.empty() || models.size() > 2) {
        throw DimensionError("evaluate expects one or two models");
    }
    if (test.items.empty()) {
        throw DimensionError("evaluate: empty test set");
    }
    if (!test.has_masks) {
        throw LabelError("evaluate: test set has no masks");
    }
    const int n = static_cast<int>(test.items.size());
    const LabelMask gt = to_label_mask(test.items, test.height, test.width);
    std::vector<ProbMap> probs(models.size());
    for (std::size_t m = 0; m < models.size(); ++m) {
        for (int first = 0; first < n; first += kEvalChunk) {
            const int count = std::min(kEvalChunk, n - first);
            const auto chunk = std::span<const Sample>(test.items).subspan(first, count);
            const ProbMap p = softmax(forward(models[m], to_image_batch(chunk, test.height, test.width),
                                              DropoutMode::off()));
            probs[m] = concat_batch(probs[m], p);
        }
    }
    const int k = models.front().config().num_classes;
    std::vector<MetricsReport> individual;
    for (const auto& p : probs) {
        individual.push_back(per_class_report(argmax(p), gt, k, spacing));
    }
    Evaluation out;
    out.avg = avg_individual(individual);
    const LabelMask voted = probs.size() == 2 ? ensemble_vote(probs[0], probs[1]) : argmax(probs[0]);
    out.vot = per_class_report(voted, gt, k, spacing);
    out.vot.mode = EnsembleMode::kVot;
    return out;
}

Trainer::Trainer(TrainConfig cfg, const DatasetBundle& bundle) : cfg_(std::move(cfg)), bundle_(&bundle) {
    cfg_.validate();
    for (const auto* d : {&bundle.labeled_1, &bundle.labeled_2, &bundle.unlabeled, &bundle.test}) {
        check_split(*d, cfg_.model, d == &bundle.test ? "test split" : "training split");
    }
    if (bundle.labeled_1.items.empty() || bundle.labeled_2.items.empty()) {
        throw DimensionError("both labeled subsets must be non-empty");
    }
    if (cfg_.co_training() && bundle.unlabeled.items.empty()) {
        throw DimensionError("co-training needs unlabeled images");
    }
    if (cfg_.method == Method::kIndependent) {
        const Dataset all = merged(bundle.labeled_1, bundle.labeled_2);
        labeled_ = {all, all};
    } else {
        labeled_ = {bundle.labeled_1, bundle.labeled_2};
    }
    for (int i = 0; i < 2; ++i) {
        models_.push_back(init_model(cfg_.model, derive_seed({cfg_.global_seed, kInitTag, std::uint64_t(i)})));
    }
}

int Trainer::iterations_per_epoch() const noexcept {
    const auto& u = bundle_->unlabeled.items;
    if (!u.empty()) {
        return static_cast<int>((u.size() + cfg_.batch_size_unlabeled - 1) / cfg_.batch_size_unlabeled);
    }
    const std::size_t m = std::max(labeled_[0].size(), labeled_[1].size());
    return static_cast<int>((m + cfg_.batch_size_labeled - 1) / cfg_.batch_size_labeled);
}

double Trainer::learning_rate_at(int epoch) const {
    if (cfg_.lr_decay_every <= 0) {
        return cfg_.learning_rate;
    }
    return cfg_.learning_rate * std::pow(cfg_.lr_decay_factor, epoch / cfg_.lr_decay_every);
}

std::vector<std::size_t> Trainer::next_labeled(int model) {
    auto& s = streams_[model];
    const std::size_t n = labeled_[model].size();
    std::vector<std::size_t> out;
    std::vector<std::size_t> perm = shuffled(n, derive_seed({cfg_.global_seed, kLabeledOrderTag,
                                                             std::uint64_t(model), s.pass}));
    for (int b = 0; b < cfg_.batch_size_labeled; ++b) {
        out.push_back(perm[s.cursor]);
        if (++s.cursor == n) {
            s.cursor = 0;
            ++s.pass;
            perm = shuffled(n, derive_seed({cfg_.global_seed, kLabeledOrderTag, std::uint64_t(model), s.pass}));
        }
    }
    return out;
}

namespace {

Batch load_batch(const Dataset& d, const std::vector<std::size_t>& idx, const TrainConfig& cfg, int epoch,
                 int iteration, std::uint64_t stream) {
    std::vector<Sample> samples;
    samples.reserve(idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j) {
        const Sample& s = d.items.at(idx[j]);
        if (cfg.augment) {
            const std::uint64_t seed = derive_seed({cfg.global_seed, kAugTag, std::uint64_t(epoch),
                                                    std::uint64_t(iteration), stream, std::uint64_t(j)});
            samples.push_back(augment(s, d.height, d.width, seed, cfg.augmentation));
        } else {
            samples.push_back(s);
        }
    }
    return {to_image_batch(samples, d.height, d.width), to_label_mask(samples, d.height, d.width)};
}

}  // namespace

void Trainer::supervised_step(int epoch, int iteration, EpochLog& acc) {
    std::array<Batch, 2> lab;
    std::array<GradientSet, 2> grads;
    std::array<WeightMap, 2> w;
    IterationLog log{epoch, iteration, 0.0, 0.0, {}, {}, 0.0, {}, {}, {}, nullptr};
    for (int i = 0; i < 2; ++i) {
        lab[i] = load_batch(labeled_[i], next_labeled(i), cfg_, epoch, iteration, std::uint64_t(i));
        const auto drop = DropoutMode::on(
            derive_seed({cfg_.global_seed, kDropTag, std::uint64_t(epoch), std::uint64_t(iteration), std::uint64_t(i), 0}));
        const ProbNode p = trace_forward(models_[i], lab[i].images, drop);
        w[i] = ones_like(lab[i].images);
        const LossNode sup = weighted_ce(p, lab[i].labels, w[i]);
        require_finite(sup.value(), "supervised loss (model " + std::to_string(i + 1) + ")", epoch, iteration);
        grads[i] = param_gradients(models_[i], sup);
        if (!grads[i].all_finite()) {
            throw NumericError("non-finite gradient (model " + std::to_string(i + 1) + ") at epoch " +
                               std::to_string(epoch) + ", iteration " + std::to_string(iteration));
        }
        log.sup[i] = sup.value();
        log.total[i] = sup.value();
        log.sup_weights[i] = &w[i];
    }
    const OptimizerStep step{learning_rate_at(epoch), {}};
    for (int i = 0; i < 2; ++i) {
        models_[i] = apply_update(models_[i], grads[i], step, optim_[i]);
        require_finite_params(models_[i], i, epoch, iteration);
        acc.sup[i] += log.sup[i];
        acc.total[i] += log.total[i];
    }
    if (hook_) {
        hook_(log);
    }
}

void Trainer::co_training_step(int epoch, int iteration, const std::vector<std::size_t>& unl_idx, EpochLog& acc) {
    const auto e = std::uint64_t(epoch);
    const auto it = std::uint64_t(iteration);
    const std::uint64_t seed = cfg_.global_seed;
    auto dropout = [&](int model, std::uint64_t site) {
        return DropoutMode::on(derive_seed({seed, kDropTag, e, it, std::uint64_t(model), site}));
    };
    auto mc = [&](int model, std::uint64_t site) {
        return McConfig{cfg_.mc.passes, derive_seed({seed, kMcTag, e, it, std::uint64_t(model), site})};
    };

    const int r = cfg_.weights.resolved_ramp_epochs(cfg_.epochs);
    const double lambda_cot = lambda_rampup(epoch, cfg_.weights.lambda_cot_max, r);
    const double lambda_div = lambda_rampup(epoch, cfg_.weights.lambda_div_max, r);
    const StageFlags stages = schedule_active(epoch, cfg_.effective_schedule());

    std::array<Batch, 2> lab;
    std::array<WeightMap, 2> w_sup;
    std::vector<ProbNode> p_lab;
    LossNode sup_sum;
    IterationLog log{epoch, iteration, lambda_cot, lambda_div, stages, {}, 0.0, {}, {}, {}, nullptr};
    for (int i = 0; i < 2; ++i) {
        lab[i] = load_batch(labeled_[i], next_labeled(i), cfg_, epoch, iteration, std::uint64_t(i));
        p_lab.push_back(trace_forward(models_[i], lab[i].images, dropout(i, 0)));
        if (stages.sup_active) {
            const auto samples = mc_sample(models_[i], lab[i].images, mc(i, 0));
            w_sup[i] = sup_weight(predictive_entropy(samples), true, cfg_.sup_weight_floor);
        } else {
            w_sup[i] = ones_like(lab[i].images);
        }
        const LossNode sup = weighted_ce(p_lab[i], lab[i].labels, w_sup[i]);
        require_finite(sup.value(), "supervised loss (model " + std::to_string(i + 1) + ")", epoch, iteration);
        log.sup[i] = sup.value();
        log.sup_weights[i] = &w_sup[i];
        sup_sum += sup;
    }

    const Batch unl = load_batch(bundle_->unlabeled, unl_idx, cfg_, epoch, iteration, 2);
    const ProbNode p1u = trace_forward(models_[0], unl.images, dropout(0, 1));
    const ProbNode p2u = trace_forward(models_[1], unl.images, dropout(1, 1));
    WeightMap w_unsup;
    if (stages.unsup_active) {
        const auto s1 = mc_sample(models_[0], unl.images, mc(0, 1));
        const auto s2 = mc_sample(models_[1], unl.images, mc(1, 1));
        w_unsup = unsup_weight(predictive_entropy(s1), predictive_entropy(s2), cfg_.unsup_norm, true);
    } else {
        w_unsup = ones_like(unl.images);
    }
    const LossNode agr = agreement_loss(p1u, p2u, w_unsup);
    require_finite(agr.value(), "agreement loss", epoch, iteration);
    log.agr = agr.value();
    log.unsup_weights = &w_unsup;

    MixedBatch mixed{concat_batch(lab[0].images, lab[1].images), concat_batch(lab[0].labels, lab[1].labels),
                     unl.images};
    DiversityOptions opts;
    opts.adv_seed_1 = derive_seed({seed, kAdvTag, e, it, 0});
    opts.adv_seed_2 = derive_seed({seed, kAdvTag, e, it, 1});
    opts.student_mode_1 = dropout(0, 2);
    opts.student_mode_2 = dropout(1, 2);
    const DiversityTerms div = diversity_loss(models_[0], models_[1], mixed, FgsmVatGenerator(cfg_.adv), opts);
    require_finite(div.teach_1, "diversity loss (model 1)", epoch, iteration);
    require_finite(div.teach_2, "diversity loss (model 2)", epoch, iteration);
    log.div = {div.teach_1, div.teach_2};

    const LossNode joint = total_loss(sup_sum, agr, div.loss, lambda_cot, lambda_div);
    require_finite(joint.value(), "total loss", epoch, iteration);
    std::array<GradientSet, 2> grads;
    for (int i = 0; i < 2; ++i) {
        log.total[i] = total_loss(log.sup[i], log.agr, log.div[i], lambda_cot, lambda_div);
        grads[i] = param_gradients(models_[i], joint);
        if (!grads[i].all_finite()) {
            throw NumericError("non-finite gradient (model " + std::to_string(i + 1) + ") at epoch " +
                               std::to_string(epoch) + ", iteration " + std::to_string(iteration));
        }
    }
    const OptimizerStep step{learning_rate_at(epoch), {}};
    for (int i = 0; i < 2; ++i) {
        models_[i] = apply_update(models_[i], grads[i], step, optim_[i]);
        require_finite_params(models_[i], i, epoch, iteration);
        acc.sup[i] += log.sup[i];
        acc.div[i] += log.div[i];
        acc.total[i] += log.total[i];
    }
    acc.agr += log.agr;
    if (hook_) {
        hook_(log);
    }
}

void Trainer::log_test_uncertainty(int epoch, EpochLog& log) const {
    const Dataset& test = bundle_->test;
    if (test.items.empty()) {
        return;
    }
    const bool last = epoch == cfg_.epochs - 1;
    auto due = [&](int every) { return every > 0 && ((epoch + 1) % every == 0 || last); };
    const bool want_log = due(cfg_.uncertainty_log_every);
    const bool want_maps = heatmap_dir_.has_value() && due(cfg_.heatmap_every) && cfg_.heatmap_count > 0;
    if (!want_log && !want_maps) {
        return;
    }
    const int n = static_cast<int>(test.items.size());
    const int keep = std::min(n, cfg_.heatmap_count);
    std::array<double, 2> mean{};
    for (int m = 0; m < 2; ++m) {
        double sum = 0.0;
        UncertaintyMap first(keep, test.height, test.width);
        for (int start = 0; start < n; start += kEvalChunk) {
            const int count = std::min(kEvalChunk, n - start);
            if (!want_log && start >= keep) {
                break;
            }
            const auto chunk = std::span<const Sample>(test.items).subspan(start, count);
            const McConfig mc{cfg_.mc.passes, derive_seed({cfg_.global_seed, kTestTag, std::uint64_t(epoch),
                                                           std::uint64_t(m), std::uint64_t(start)})};
            const UncertaintyMap u =
                predictive_entropy(mc_sample(models_[m], to_image_batch(chunk, test.height, test.width), mc));
            sum += u.sum();
            for (int j = 0; j < count && start + j < keep; ++j) {
                const auto src = u.item(j);
                std::copy(src.begin(), src.end(), first.data().begin() + static_cast<std::ptrdiff_t>((start + j) * src.size()));
            }
        }
        mean[m] = sum / (static_cast<double>(n) * test.height * test.width);
        if (want_maps) {
            export_heatmap(first, cfg_.model.num_classes, *heatmap_dir_, "m" + std::to_string(m + 1), epoch);
        }
    }
    if (want_log) {
        log.test_uncertainty = mean;
    }
}

const EpochLog& Trainer::run_epoch() {
    if (done()) {
        throw ConfigError("training already finished");
    }
    const int epoch = next_epoch_;
    EpochLog acc;
    acc.epoch = epoch;
    acc.learning_rate = learning_rate_at(epoch);
    const int iters = iterations_per_epoch();
    if (cfg_.co_training()) {
        const int r = cfg_.weights.resolved_ramp_epochs(cfg_.epochs);
        acc.lambda_cot = lambda_rampup(epoch, cfg_.weights.lambda_cot_max, r);
        acc.lambda_div = lambda_rampup(epoch, cfg_.weights.lambda_div_max, r);
        const StageFlags s = schedule_active(epoch, cfg_.effective_schedule());
        acc.sup_active = s.sup_active;
        acc.unsup_active = s.unsup_active;
        const std::size_t nu = bundle_->unlabeled.size();
        const auto order = shuffled(nu, derive_seed({cfg_.global_seed, kUnlabeledOrderTag, std::uint64_t(epoch)}));
        const std::size_t bs = static_cast<std::size_t>(cfg_.batch_size_unlabeled);
        for (int it = 0; it < iters; ++it) {
            const std::size_t first = static_cast<std::size_t>(it) * bs;
            const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(first),
                                               order.begin() + static_cast<std::ptrdiff_t>(std::min(first + bs, nu)));
            co_training_step(epoch, it, idx, acc);
        }
    } else {
        for (int it = 0; it < iters; ++it) {
            supervised_step(epoch, it, acc);
        }
    }
    const double inv = 1.0 / iters;
    for (int i = 0; i < 2; ++i) {
        acc.sup[i] *= inv;
        acc.div[i] *= inv;
        acc.total[i] *= inv;
    }
    acc.agr *= inv;
    log_test_uncertainty(epoch, acc);
    history_.push_back(acc);
    ++next_epoch_;
    return history_.back();
}

RunReport Trainer::report() const {
    RunReport r;
    r.method = std::string(to_string(cfg_.method));
    r.seed = cfg_.global_seed;
    r.epochs = history_;
    const Evaluation ev = evaluate(models_, bundle_->test);
    r.avg = ev.avg;
    r.vot = ev.vot;
    return r;
}

std::vector<std::filesystem::path> Trainer::save_state(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    std::vector<std::filesystem::path> paths;
    for (int i = 0; i < 2; ++i) {
        const auto p = dir / ("model_" + std::to_string(i + 1) + ".ckpt");
        save_checkpoint(p, models_[i], &optim_[i]);
        paths.push_back(p);
    }
    json state;
    state["format"] = kStateFormat;
    state["version"] = kStateVersion;
    state["method"] = to_string(cfg_.method);
    state["global_seed"] = cfg_.global_seed;
    state["epochs"] = cfg_.epochs;
    state["next_epoch"] = next_epoch_;
    json streams = json::array();
    for (const auto& s : streams_) {
        streams.push_back({{"pass", s.pass}, {"cursor", s.cursor}});
    }
    state["labeled_streams"] = streams;
    state["history"] = history_;
    const auto p = dir / kStateFile;
    const std::string text = state.dump(2) + "\n";
    detail::write_file(p, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
    paths.push_back(p);
    return paths;
}

Trainer Trainer::restore(const std::filesystem::path& dir, TrainConfig cfg, const DatasetBundle& bundle) {
    Trainer t(std::move(cfg), bundle);
    const auto bytes = detail::read_file(dir / kStateFile);
    json state;
    try {
        state = json::parse(bytes.begin(), bytes.end());
        if (state.at("format").get<std::string>() != kStateFormat || state.at("version").get<int>() != kStateVersion) {
            throw FormatError("not a trainer state file", 0);
        }
        if (state.at("method").get<std::string>() != to_string(t.cfg_.method) ||
            state.at("global_seed").get<std::uint64_t>() != t.cfg_.global_seed ||
            state.at("epochs").get<int>() != t.cfg_.epochs) {
            throw ConfigError("checkpoint in " + dir.string() + " was written with a different method, seed or epoch count");
        }
        t.next_epoch_ = state.at("next_epoch").get<int>();
        const auto& streams = state.at("labeled_streams");
        for (int i = 0; i < 2; ++i) {
            t.streams_[i].pass = streams.at(i).at("pass").get<std::uint64_t>();
            t.streams_[i].cursor = streams.at(i).at("cursor").get<std::size_t>();
            if (t.streams_[i].cursor >= t.labeled_[i].size()) {
                throw FormatError("labeled stream cursor out of range", 0);
            }
        }
        t.history_ = state.at("history").get<std::vector<EpochLog>>();
    } catch (const json::exception& e) {
        throw FormatError(std::string(kStateFile) + ": " + e.what(), 0);
    }
    if (t.next_epoch_ < 0 || t.next_epoch_ > t.cfg_.epochs || static_cast<int>(t.history_.size()) != t.next_epoch_) {
        throw FormatError(std::string(kStateFile) + ": inconsistent epoch counters", 0);
    }
    for (int i = 0; i < 2; ++i) {
        LoadedCheckpoint ck = load_checkpoint(dir / ("model_" + std::to_string(i + 1) + ".ckpt"));
        if (!(ck.model.config() == t.cfg_.model)) {
            throw ConfigError("checkpoint model configuration differs from the training configuration");
        }
        if (!ck.optimizer) {
            throw FormatError("checkpoint has no optimizer state", 0);
        }
        t.models_[i] = std::move(ck.model);
        t.optim_[i] = std::move(*ck.optimizer);
    }
    return t;
}

RunReport train(const TrainConfig& cfg, const DatasetBundle& bundle, const TrainOptions& opts) {
    Trainer t(cfg, bundle);
    if (opts.hook) {
        t.set_iteration_hook(opts.hook);
    }
    if (opts.heatmap_dir) {
        t.set_heatmap_dir(*opts.heatmap_dir);
    }
    std::vector<std::filesystem::path> saved;
    while (!t.done()) {
        t.run_epoch();
        if (opts.checkpoint_dir && opts.checkpoint_every > 0 && t.next_epoch() % opts.checkpoint_every == 0 &&
            !t.done()) {
            t.save_state(*opts.checkpoint_dir);
        }
    }
    if (opts.checkpoint_dir) {
        saved = t.save_state(*opts.checkpoint_dir);
    }
    RunReport r = t.report();
    for (const auto& p : saved) {
        r.checkpoints.push_back(p.generic_string());
    }
    return r;
}

// JSON encodings

void to_json(json& j, const MetricsReport& r) {
    j = json::object();
    j["mode"] = to_string(r.mode);
    json per_class = json::object();
    for (const auto& [c, d] : r.per_class_dsc) {
        per_class[std::to_string(c)] = {{"dsc", d}, {"hd", r.per_class_hd.at(c)}};
    }
    j["per_class"] = per_class;
    j["mean_dsc"] = r.mean_dsc;
    j["mean_hd"] = r.mean_hd;
}

void from_json(const json& j, MetricsReport& r) {
    const auto mode = j.at("mode").get<std::string>();
    if (mode != "avg" && mode != "vot") {
        throw json::other_error::create(501, "unknown ensemble mode " + mode, &j);
    }
    r.mode = mode == "avg" ? EnsembleMode::kAvg : EnsembleMode::kVot;
    r.per_class_dsc.clear();
    r.per_class_hd.clear();
    for (const auto& [key, v] : j.at("per_class").items()) {
        const int c = std::stoi(key);
        r.per_class_dsc[c] = v.at("dsc").get<double>();
        r.per_class_hd[c] = v.at("hd").get<double>();
    }
    r.mean_dsc = j.at("mean_dsc").get<double>();
    r.mean_hd = j.at("mean_hd").get<double>();
}

void to_json(json& j, const SeedStat& s) { j = {{"mean", s.mean}, {"std", s.std}}; }

void to_json(json& j, const AggregateReport& r) {
    j = json::object();
    j["mode"] = to_string(r.mode);
    j["runs"] = r.runs;
    json per_class = json::object();
    for (const auto& [c, d] : r.per_class_dsc) {
        per_class[std::to_string(c)] = {{"dsc", d}, {"hd", r.per_class_hd.at(c)}};
    }
    j["per_class"] = per_class;
    j["mean_dsc"] = r.mean_dsc;
    j["mean_hd"] = r.mean_hd;
}

void to_json(json& j, const EpochLog& e) {
    j = json::object();
    j["epoch"] = e.epoch;
    j["learning_rate"] = e.learning_rate;
    j["lambda_cot"] = e.lambda_cot;
    j["lambda_div"] = e.lambda_div;
    j["sup_active"] = e.sup_active;
    j["unsup_active"] = e.unsup_active;
    j["sup"] = e.sup;
    j["agr"] = e.agr;
    j["div"] = e.div;
    j["total"] = e.total;
    if (e.test_uncertainty) {
        j["test_uncertainty"] = *e.test_uncertainty;
    } else {
        j["test_uncertainty"] = nullptr;
    }
}

void from_json(const json& j, EpochLog& e) {
    e.epoch = j.at("epoch").get<int>();
    e.learning_rate = j.at("learning_rate").get<double>();
    e.lambda_cot = j.at("lambda_cot").get<double>();
    e.lambda_div = j.at("lambda_div").get<double>();
    e.sup_active = j.at("sup_active").get<bool>();
    e.unsup_active = j.at("unsup_active").get<bool>();
    e.sup = j.at("sup").get<std::array<double, 2>>();
    e.agr = j.at("agr").get<double>();
    e.div = j.at("div").get<std::array<double, 2>>();
    e.total = j.at("total").get<std::array<double, 2>>();
    const auto& u = j.at("test_uncertainty");
    if (u.is_null()) {
        e.test_uncertainty.reset();
    } else {
        e.test_uncertainty = u.get<std::array<double, 2>>();
    }
}

std::string RunReport::to_json() const {
    json j;
    j["method"] = method;
    j["seed"] = seed;
    j["epochs"] = epochs;
    j["avg"] = avg;
    j["vot"] = vot;
    j["checkpoints"] = checkpoints;
    return j.dump(2) + "\n";
}

RunReport RunReport::from_json(std::string_view text) {
    RunReport r;
    try {
        const json j = json::parse(text);
        r.method = j.at("method").get<std::string>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.epochs = j.at("epochs").get<std::vector<EpochLog>>();
        r.avg = j.at("avg").get<MetricsReport>();
        r.vot = j.at("vot").get<MetricsReport>();
        r.checkpoints = j.at("checkpoints").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw FormatError(std::string("run report: ") + e.what(), 0);
    }
    return r;
}

std::string RunReport::losses_csv() const {
    std::ostringstream out;
    out.precision(17);
    out << "epoch,model,lr,lambda_cot,lambda_div,sup,agr,div,total,test_uncertainty\n";
    for (const auto& e : epochs) {
        for (int i = 0; i < 2; ++i) {
            out << e.epoch << ',' << i + 1 << ',' << e.learning_rate << ',' << e.lambda_cot << ',' << e.lambda_div
                << ',' << e.sup[i] << ',' << e.agr << ',' << e.div[i] << ',' << e.total[i] << ',';
            if (e.test_uncertainty) {
                out << (*e.test_uncertainty)[i];
            }
            out << '\n';
        }
    }
    return out.str();
}

}  // namespace uadct
