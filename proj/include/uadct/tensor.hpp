#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace uadct {

/// Dense batch x channels x height x width grid, row-major (NCHW).
class Tensor {
public:
    Tensor() = default;
    Tensor(int batch, int channels, int height, int width, double fill = 0.0);

    int batch() const noexcept { return n_; }
    int channels() const noexcept { return c_; }
    int height() const noexcept { return h_; }
    int width() const noexcept { return w_; }
    std::size_t size() const noexcept { return data_.size(); }
    std::size_t plane_size() const noexcept { return static_cast<std::size_t>(h_) * w_; }
    std::size_t item_size() const noexcept { return static_cast<std::size_t>(c_) * h_ * w_; }

    double& at(int n, int c, int y, int x) noexcept { return data_[index(n, c, y, x)]; }
    double at(int n, int c, int y, int x) const noexcept { return data_[index(n, c, y, x)]; }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    std::span<double> item(int n) noexcept { return {data_.data() + n * item_size(), item_size()}; }
    std::span<const double> item(int n) const noexcept {
        return {data_.data() + n * item_size(), item_size()};
    }
    std::span<double> plane(int n, int c) noexcept {
        return {data_.data() + (static_cast<std::size_t>(n) * c_ + c) * plane_size(), plane_size()};
    }
    std::span<const double> plane(int n, int c) const noexcept {
        return {data_.data() + (static_cast<std::size_t>(n) * c_ + c) * plane_size(), plane_size()};
    }

    bool same_shape(const Tensor& other) const noexcept {
        return n_ == other.n_ && c_ == other.c_ && h_ == other.h_ && w_ == other.w_;
    }
    std::string shape_string() const;

    bool all_finite() const noexcept;
    void fill(double value) noexcept;
    /// this += scale * other
    void axpy(double scale, const Tensor& other);

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    std::size_t index(int n, int c, int y, int x) const noexcept {
        return ((static_cast<std::size_t>(n) * c_ + c) * h_ + y) * w_ + x;
    }

    int n_ = 0;
    int c_ = 0;
    int h_ = 0;
    int w_ = 0;
    std::vector<double> data_;
};

/// Batch x height x width scalar field (uncertainty and weight maps).
class Field {
public:
    Field() = default;
    Field(int batch, int height, int width, double fill = 0.0);

    int batch() const noexcept { return n_; }
    int height() const noexcept { return h_; }
    int width() const noexcept { return w_; }
    std::size_t size() const noexcept { return data_.size(); }

    double& at(int n, int y, int x) noexcept { return data_[(static_cast<std::size_t>(n) * h_ + y) * w_ + x]; }
    double at(int n, int y, int x) const noexcept {
        return data_[(static_cast<std::size_t>(n) * h_ + y) * w_ + x];
    }
    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    std::span<const double> item(int n) const noexcept {
        return {data_.data() + static_cast<std::size_t>(n) * h_ * w_, static_cast<std::size_t>(h_) * w_};
    }

    bool same_shape(const Field& other) const noexcept {
        return n_ == other.n_ && h_ == other.h_ && w_ == other.w_;
    }

    double sum() const noexcept;
    double mean() const noexcept;

    friend bool operator==(const Field&, const Field&) = default;

private:
    int n_ = 0;
    int h_ = 0;
    int w_ = 0;
    std::vector<double> data_;
};

/// Per-pixel class labels for a batch. kUnlabeled marks pixels without annotation.
struct LabelMask {
    static constexpr std::uint8_t kUnlabeled = 255;

    int batch = 0;
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> labels;

    LabelMask() = default;
    LabelMask(int n, int h, int w, std::uint8_t fill = 0)
        : batch(n), height(h), width(w), labels(static_cast<std::size_t>(n) * h * w, fill) {}

    std::uint8_t& at(int n, int y, int x) noexcept {
        return labels[(static_cast<std::size_t>(n) * height + y) * width + x];
    }
    std::uint8_t at(int n, int y, int x) const noexcept {
        return labels[(static_cast<std::size_t>(n) * height + y) * width + x];
    }
    std::span<const std::uint8_t> item(int n) const noexcept {
        const std::size_t plane = static_cast<std::size_t>(height) * width;
        return {labels.data() + n * plane, plane};
    }

    friend bool operator==(const LabelMask&, const LabelMask&) = default;
};

// Domain aliases. All are NCHW tensors; the alias records which contract applies.
using ImageBatch = Tensor;      // N x input_channels x H x W, values in [0,1]
using Logits = Tensor;          // N x K x H x W pre-softmax scores
using ProbMap = Tensor;         // N x K x H x W, per-pixel distributions
using ImageGradient = Tensor;   // same shape as the ImageBatch it belongs to
using UncertaintyMap = Field;   // predictive entropy in nats
using WeightMap = Field;

/// Stacks the items of a and b along the batch axis. Either may be empty.
Tensor concat_batch(const Tensor& a, const Tensor& b);
/// Items [first, first + count) of t.
Tensor slice_batch(const Tensor& t, int first, int count);
LabelMask concat_batch(const LabelMask& a, const LabelMask& b);

}  // namespace uadct
