#include "uadct/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "uadct/error.hpp"

namespace uadct {

Tensor::Tensor(int batch, int channels, int height, int width, double fill)
    : n_(batch), c_(channels), h_(height), w_(width) {
    if (batch < 0 || channels < 0 || height < 0 || width < 0) {
        throw DimensionError("negative tensor dimension");
    }
    data_.assign(static_cast<std::size_t>(batch) * channels * height * width, fill);
}

std::string Tensor::shape_string() const {
    return std::to_string(n_) + "x" + std::to_string(c_) + "x" + std::to_string(h_) + "x" +
           std::to_string(w_);
}

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double value) noexcept { std::fill(data_.begin(), data_.end(), value); }

void Tensor::axpy(double scale, const Tensor& other) {
    if (!same_shape(other)) {
        throw DimensionError("axpy: " + shape_string() + " vs " + other.shape_string());
    }
    for (std::size_t i = 0; i < data_.size(); ++i) {
        data_[i] += scale * other.data_[i];
    }
}

Field::Field(int batch, int height, int width, double fill) : n_(batch), h_(height), w_(width) {
    if (batch < 0 || height < 0 || width < 0) {
        throw DimensionError("negative field dimension");
    }
    data_.assign(static_cast<std::size_t>(batch) * height * width, fill);
}

double Field::sum() const noexcept { return std::accumulate(data_.begin(), data_.end(), 0.0); }

double Field::mean() const noexcept { return data_.empty() ? 0.0 : sum() / static_cast<double>(data_.size()); }

Tensor concat_batch(const Tensor& a, const Tensor& b) {
    if (a.batch() == 0) {
        return b;
    }
    if (b.batch() == 0) {
        return a;
    }
    if (a.channels() != b.channels() || a.height() != b.height() || a.width() != b.width()) {
        throw DimensionError("concat_batch: " + a.shape_string() + " vs " + b.shape_string());
    }
    Tensor out(a.batch() + b.batch(), a.channels(), a.height(), a.width());
    std::copy(a.data().begin(), a.data().end(), out.data().begin());
    std::copy(b.data().begin(), b.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(a.size()));
    return out;
}

Tensor slice_batch(const Tensor& t, int first, int count) {
    if (first < 0 || count < 0 || first + count > t.batch()) {
        throw DimensionError("slice_batch out of range for " + t.shape_string());
    }
    Tensor out(count, t.channels(), t.height(), t.width());
    const auto begin = t.data().begin() + static_cast<std::ptrdiff_t>(first * t.item_size());
    std::copy(begin, begin + static_cast<std::ptrdiff_t>(out.size()), out.data().begin());
    return out;
}

LabelMask concat_batch(const LabelMask& a, const LabelMask& b) {
    if (a.batch == 0) {
        return b;
    }
    if (b.batch == 0) {
        return a;
    }
    if (a.height != b.height || a.width != b.width) {
        throw DimensionError("concat_batch: label masks differ in spatial size");
    }
    LabelMask out = a;
    out.batch += b.batch;
    out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
    return out;
}

}  // namespace uadct
