#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "uadct/tensor.hpp"

namespace uadct {

struct SegNetConfig {
    int input_channels = 1;
    int num_classes = 4;
    int base_channels = 8;
    /// Number of downsampling (and matching upsampling) stages.
    int depth = 2;
    double dropout_rate = 0.5;
    /// Additive encoder-to-decoder skips at each resolution. They never cross the dropout site.
    bool skip_connections = true;

    /// Throws ConfigError when a field is out of range.
    void validate() const;
    /// Spatial dims must be divisible by this.
    int size_multiple() const { return 1 << depth; }

    friend bool operator==(const SegNetConfig&, const SegNetConfig&) = default;
};

struct ParamTensor {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<float> values;

    friend bool operator==(const ParamTensor&, const ParamTensor&) = default;
};

/// One segmentation network: config plus an ordered list of named parameters.
///
/// Layout for depth d and base width b:
///   enc{i}   3x3 conv, b*2^i output channels, ReLU, then 2x2 average pooling
///   dropout  the single stochastic site, applied to the deepest pooled features
///   dec{i}   2x nearest upsampling, optional skip add of enc{i}, 3x3 conv, ReLU
///   head     1x1 conv to num_classes logits
class SegModel {
public:
    SegModel() = default;
    /// Zero-initialized parameters with the layout implied by config.
    explicit SegModel(const SegNetConfig& config);

    const SegNetConfig& config() const noexcept { return config_; }
    std::span<const ParamTensor> params() const noexcept { return params_; }
    std::span<ParamTensor> params() noexcept { return params_; }
    std::size_t parameter_count() const noexcept;
    const ParamTensor& param(const std::string& name) const;
    ParamTensor& param(const std::string& name);

    friend bool operator==(const SegModel&, const SegModel&) = default;

private:
    SegNetConfig config_;
    std::vector<ParamTensor> params_;
};

/// He-style uniform fan-in initialization, U(-sqrt(6/fan_in), sqrt(6/fan_in)) for
/// hidden convs and U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for the head; zero biases.
SegModel init_model(const SegNetConfig& config, std::uint64_t seed);

struct DropoutMode {
    bool enabled = false;
    std::uint64_t seed = 0;

    static DropoutMode off() { return {}; }
    static DropoutMode on(std::uint64_t seed) { return {true, seed}; }
};

/// Throws DimensionError on wrong channel count or indivisible spatial dims,
/// InputError on non-finite pixels.
Logits forward(const SegModel& model, const ImageBatch& images, DropoutMode mode);

/// Channel-wise softmax per pixel.
ProbMap softmax(const Logits& logits);

/// Per-pixel argmax over classes; ties go to the lowest index.
LabelMask argmax(const ProbMap& probs);

namespace detail {
struct Trace;
}

/// A probability map that remembers how it was produced so losses on it can be
/// differentiated back to model parameters and input pixels.
class ProbNode {
public:
    /// Leaf node with no producing model (gradient is recorded but goes nowhere).
    explicit ProbNode(ProbMap constant);

    const ProbMap& value() const noexcept;
    /// Model that produced this node, or nullptr for a leaf.
    const SegModel* model() const noexcept;
    const ImageBatch* input() const noexcept;
    const void* id() const noexcept { return trace_.get(); }

private:
    friend ProbNode trace_forward(const SegModel&, const ImageBatch&, DropoutMode);
    friend class LossNode;
    friend struct BackwardAccess;
    explicit ProbNode(std::shared_ptr<const detail::Trace> trace) : trace_(std::move(trace)) {}

    std::shared_ptr<const detail::Trace> trace_;
};

/// forward + softmax, recorded for backpropagation. The model must stay alive
/// and unmodified until gradients have been taken.
ProbNode trace_forward(const SegModel& model, const ImageBatch& images, DropoutMode mode);

/// Scalar objective together with its gradient w.r.t. every ProbNode it read.
class LossNode {
public:
    LossNode() = default;
    explicit LossNode(double value) : value_(value) {}

    double value() const noexcept { return value_; }

    /// Adds dL/dprobs for node (merged with any existing term for that node).
    void accumulate(const ProbNode& node, const Tensor& grad);
    /// nullptr when the loss does not depend on node.
    const Tensor* gradient_wrt(const ProbNode& node) const noexcept;
    bool depends_on(const SegModel& model) const noexcept;

    LossNode& operator+=(const LossNode& other);
    LossNode& operator*=(double scale);
    friend LossNode operator+(LossNode a, const LossNode& b) { return a += b; }
    friend LossNode operator*(double s, LossNode a) { return a *= s; }

private:
    friend struct BackwardAccess;
    struct Term {
        ProbNode node;
        Tensor grad;
    };
    double value_ = 0.0;
    std::vector<Term> terms_;
};

/// Per-parameter gradients aligned with SegModel::params().
struct GradientSet {
    std::vector<std::vector<double>> grads;

    GradientSet& operator+=(const GradientSet& other);
    bool all_finite() const noexcept;
};

/// dL/dtheta summed over every traced forward of `model` that `loss` reads.
/// Throws GraphError if the loss does not depend on the model.
GradientSet param_gradients(const SegModel& model, const LossNode& loss);

/// dL/dx for traced forwards of `model` whose input equals `images`.
ImageGradient input_gradient(const SegModel& model, const ImageBatch& images, const LossNode& loss);

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct OptimizerStep {
    double learning_rate = 1e-3;
    AdamConfig adam;
};

/// Adam moments, stored in 32-bit like the parameters.
struct OptimizerState {
    std::uint64_t step = 0;
    std::vector<std::vector<float>> m;
    std::vector<std::vector<float>> v;

    friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

/// One Adam step. `state` is advanced in place (created on first use).
SegModel apply_update(const SegModel& model, const GradientSet& grads, const OptimizerStep& step,
                      OptimizerState& state);

// Checkpoint: "UASEGCKPT", u32 version, config block, u32 tensor count, then per
// tensor: u16 name length, name bytes, u8 rank, u32 dims, float32 values. An
// optional "ADAMSTATE" block with the optimizer moments follows. Little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(std::ostream& out, const SegModel& model, const OptimizerState* optimizer = nullptr);
void save_checkpoint(const std::filesystem::path& path, const SegModel& model,
                     const OptimizerState* optimizer = nullptr);

struct LoadedCheckpoint {
    SegModel model;
    std::optional<OptimizerState> optimizer;
};

LoadedCheckpoint read_checkpoint(std::span<const std::uint8_t> bytes);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace uadct
