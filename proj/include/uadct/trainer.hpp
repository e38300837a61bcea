#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "uadct/adversarial.hpp"
#include "uadct/data.hpp"
#include "uadct/losses.hpp"
#include "uadct/metrics.hpp"
#include "uadct/segnet.hpp"
#include "uadct/uncertainty.hpp"

namespace uadct {

enum class Method {
    /// Each model trained on its own labeled half with plain cross-entropy.
    kPart,
    /// Each model trained on all labeled data with plain cross-entropy.
    kIndependent,
    /// Co-training with both uncertainty stages switched off.
    kDct,
    /// Co-training with both uncertainty stages on their schedule.
    kOurs,
    kSupUncOnly,
    kUnsupUncOnly,
};

std::string_view to_string(Method m);
/// Accepts part, independent, dct, ours, sup-unc, unsup-unc. Throws ConfigError otherwise.
Method parse_method(std::string_view name);

struct TrainConfig {
    int epochs = 40;
    int batch_size_labeled = 4;
    int batch_size_unlabeled = 16;
    Method method = Method::kOurs;
    SegNetConfig model;
    /// passes is used; base_seed is ignored because the trainer derives every MC seed.
    McConfig mc;
    UncertaintySchedule schedule;
    UnsupNormConfig unsup_norm;
    double sup_weight_floor = 0.1;
    LossWeights weights;
    AdvConfig adv;
    double learning_rate = 1e-3;
    /// Multiply the learning rate by lr_decay_factor every this many epochs; 0 disables.
    int lr_decay_every = 30;
    double lr_decay_factor = 0.1;
    AugmentConfig augmentation;
    bool augment = true;
    std::uint64_t global_seed = 1;
    /// Mean test-set predictive entropy is logged every this many epochs (and at
    /// the last epoch); 0 disables.
    int uncertainty_log_every = 1;
    /// Heatmaps of the first heatmap_count test images are written every this many
    /// epochs (and at the last epoch) when a heatmap directory is set; 0 disables.
    int heatmap_every = 10;
    int heatmap_count = 4;

    void validate() const;
    /// Schedule actually used by the configured method.
    UncertaintySchedule effective_schedule() const;
    bool co_training() const noexcept { return method != Method::kPart && method != Method::kIndependent; }
};

struct EpochLog {
    int epoch = 0;
    double learning_rate = 0.0;
    double lambda_cot = 0.0;
    double lambda_div = 0.0;
    bool sup_active = false;
    bool unsup_active = false;
    /// Iteration means. agr is shared by both models; div[i] is the cross-model term
    /// whose gradient reaches model i; total[i] = sup[i] + lambda_cot agr + lambda_div div[i].
    std::array<double, 2> sup{};
    double agr = 0.0;
    std::array<double, 2> div{};
    std::array<double, 2> total{};
    /// Mean predictive entropy over the test set, per model; empty when not logged.
    std::optional<std::array<double, 2>> test_uncertainty;

    /// Mean of the two models' test uncertainties.
    std::optional<double> mean_test_uncertainty() const;

    friend bool operator==(const EpochLog&, const EpochLog&) = default;
};

struct RunReport {
    std::string method;
    std::uint64_t seed = 0;
    std::vector<EpochLog> epochs;
    MetricsReport avg;
    MetricsReport vot;
    std::vector<std::string> checkpoints;

    std::string to_json() const;
    static RunReport from_json(std::string_view text);
    /// Per-epoch losses: epoch,model,lr,lambda_cot,lambda_div,sup,agr,div,total,test_uncertainty.
    std::string losses_csv() const;

    friend bool operator==(const RunReport&, const RunReport&) = default;
};

/// Everything logged for one optimizer step. Pointers are valid only during the callback.
struct IterationLog {
    int epoch = 0;
    int iteration = 0;
    double lambda_cot = 0.0;
    double lambda_div = 0.0;
    StageFlags stages;
    std::array<double, 2> sup{};
    double agr = 0.0;
    std::array<double, 2> div{};
    std::array<double, 2> total{};
    std::array<const WeightMap*, 2> sup_weights{};
    /// nullptr for methods without an agreement term.
    const WeightMap* unsup_weights = nullptr;
};

using IterationHook = std::function<void(const IterationLog&)>;

/// Dropout off. AVG averages the per-model reports, VOT scores the soft vote.
struct Evaluation {
    MetricsReport avg;
    MetricsReport vot;
};
Evaluation evaluate(std::span<const SegModel> models, const Dataset& test, double spacing = 1.0);

/// Stateful training loop; one call to run_epoch advances one epoch.
class Trainer {
public:
    /// Throws ConfigError on an invalid configuration and DimensionError when the
    /// bundle does not fit the model.
    Trainer(TrainConfig cfg, const DatasetBundle& bundle);

    const TrainConfig& config() const noexcept { return cfg_; }
    int next_epoch() const noexcept { return next_epoch_; }
    bool done() const noexcept { return next_epoch_ >= cfg_.epochs; }
    const SegModel& model(int i) const { return models_.at(i); }
    std::span<const SegModel> models() const noexcept { return models_; }
    const std::vector<EpochLog>& history() const noexcept { return history_; }
    int iterations_per_epoch() const noexcept;

    void set_iteration_hook(IterationHook hook) { hook_ = std::move(hook); }
    void set_heatmap_dir(std::filesystem::path dir) { heatmap_dir_ = std::move(dir); }

    /// Throws NumericError naming the offending term when a loss or gradient is not finite.
    const EpochLog& run_epoch();

    /// Evaluates on the test split and assembles the report.
    RunReport report() const;

    /// Writes model_1.ckpt, model_2.ckpt (with optimizer state) and trainer_state.json.
    std::vector<std::filesystem::path> save_state(const std::filesystem::path& dir) const;
    /// Continues a run saved by save_state with the same configuration and bundle.
    static Trainer restore(const std::filesystem::path& dir, TrainConfig cfg, const DatasetBundle& bundle);

private:
    struct LabeledStream {
        std::uint64_t pass = 0;
        std::size_t cursor = 0;
    };

    std::vector<std::size_t> next_labeled(int model);
    double learning_rate_at(int epoch) const;
    void co_training_step(int epoch, int iteration, const std::vector<std::size_t>& unl_idx, EpochLog& acc);
    void supervised_step(int epoch, int iteration, EpochLog& acc);
    void log_test_uncertainty(int epoch, EpochLog& log) const;

    TrainConfig cfg_;
    const DatasetBundle* bundle_;
    /// Labeled pool per model (PART: own half, INDEPENDENT: both halves).
    std::array<Dataset, 2> labeled_;
    std::vector<SegModel> models_;
    std::array<OptimizerState, 2> optim_;
    std::array<LabeledStream, 2> streams_;
    int next_epoch_ = 0;
    std::vector<EpochLog> history_;
    IterationHook hook_;
    std::optional<std::filesystem::path> heatmap_dir_;
};

struct TrainOptions {
    /// When set, a checkpoint is written here after the last epoch, and every
    /// checkpoint_every epochs when that is positive.
    std::optional<std::filesystem::path> checkpoint_dir;
    int checkpoint_every = 0;
    std::optional<std::filesystem::path> heatmap_dir;
    IterationHook hook;
};

RunReport train(const TrainConfig& cfg, const DatasetBundle& bundle, const TrainOptions& opts = {});

}  // namespace uadct
