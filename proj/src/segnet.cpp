#include "uadct/segnet.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>

#include "binary_io.hpp"
#include "uadct/error.hpp"
#include "uadct/rng.hpp"

namespace uadct {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

int enc_channels(const SegNetConfig& c, int stage) { return c.base_channels << stage; }

int dec_in_channels(const SegNetConfig& c, int stage) { return c.base_channels << stage; }

int dec_out_channels(const SegNetConfig& c, int stage) {
    return stage > 0 ? c.base_channels << (stage - 1) : c.base_channels;
}

// Parameter indices inside SegModel::params(): enc{i} weight/bias, dec{i} weight/bias
// (stored from shallow to deep), head weight/bias.
std::size_t enc_w(int stage) { return 2 * static_cast<std::size_t>(stage); }
std::size_t dec_w(const SegNetConfig& c, int stage) { return 2 * static_cast<std::size_t>(c.depth + stage); }
std::size_t head_w(const SegNetConfig& c) { return 4 * static_cast<std::size_t>(c.depth); }

struct ConvShape {
    int cin;
    int cout;
    int k;
};

ConvShape enc_shape(const SegNetConfig& c, int s) {
    return {s == 0 ? c.input_channels : enc_channels(c, s - 1), enc_channels(c, s), 3};
}
ConvShape dec_shape(const SegNetConfig& c, int s) { return {dec_in_channels(c, s), dec_out_channels(c, s), 3}; }
ConvShape head_shape(const SegNetConfig& c) { return {c.base_channels, c.num_classes, 1}; }

// im2col for a "same" padded k x k convolution on one batch item.
void im2col(std::span<const double> in, int cin, int h, int w, int k, RowMat& cols) {
    const int pad = k / 2;
    const int hw = h * w;
    cols.resize(static_cast<Eigen::Index>(cin) * k * k, hw);
    for (int ci = 0; ci < cin; ++ci) {
        const double* src = in.data() + static_cast<std::size_t>(ci) * hw;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                double* dst = cols.data() + (static_cast<std::size_t>(ci) * k * k + ky * k + kx) * hw;
                const int dy = ky - pad;
                const int dx = kx - pad;
                for (int y = 0; y < h; ++y) {
                    const int sy = y + dy;
                    double* row = dst + static_cast<std::size_t>(y) * w;
                    if (sy < 0 || sy >= h) {
                        std::fill(row, row + w, 0.0);
                        continue;
                    }
                    const double* srow = src + static_cast<std::size_t>(sy) * w;
                    for (int x = 0; x < w; ++x) {
                        const int sx = x + dx;
                        row[x] = (sx >= 0 && sx < w) ? srow[sx] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im_add(const RowMat& cols, int cin, int h, int w, int k, std::span<double> out) {
    const int pad = k / 2;
    const int hw = h * w;
    for (int ci = 0; ci < cin; ++ci) {
        double* dst = out.data() + static_cast<std::size_t>(ci) * hw;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const double* src = cols.data() + (static_cast<std::size_t>(ci) * k * k + ky * k + kx) * hw;
                const int dy = ky - pad;
                const int dx = kx - pad;
                for (int y = 0; y < h; ++y) {
                    const int sy = y + dy;
                    if (sy < 0 || sy >= h) {
                        continue;
                    }
                    const double* row = src + static_cast<std::size_t>(y) * w;
                    double* drow = dst + static_cast<std::size_t>(sy) * w;
                    for (int x = 0; x < w; ++x) {
                        const int sx = x + dx;
                        if (sx >= 0 && sx < w) {
                            drow[sx] += row[x];
                        }
                    }
                }
            }
        }
    }
}

void conv_forward(const Tensor& in, const ConvShape& s, const std::vector<double>& weight,
                  const std::vector<double>& bias, Tensor& out) {
    const int h = in.height();
    const int w = in.width();
    out = Tensor(in.batch(), s.cout, h, w);
    ConstMatMap wm(weight.data(), s.cout, static_cast<Eigen::Index>(s.cin) * s.k * s.k);
    RowMat cols;
    for (int n = 0; n < in.batch(); ++n) {
        MatMap om(out.item(n).data(), s.cout, static_cast<Eigen::Index>(h) * w);
        if (s.k == 1) {
            om.noalias() = wm * ConstMatMap(in.item(n).data(), s.cin, static_cast<Eigen::Index>(h) * w);
        } else {
            im2col(in.item(n), s.cin, h, w, s.k, cols);
            om.noalias() = wm * cols;
        }
        for (int co = 0; co < s.cout; ++co) {
            om.row(co).array() += bias[co];
        }
    }
}

void conv_backward(const Tensor& in, const ConvShape& s, const std::vector<double>& weight, const Tensor& dout,
                   std::vector<double>* dweight, std::vector<double>* dbias, Tensor* din) {
    const int h = in.height();
    const int w = in.width();
    const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;
    const Eigen::Index ck = static_cast<Eigen::Index>(s.cin) * s.k * s.k;
    ConstMatMap wm(weight.data(), s.cout, ck);
    RowMat cols;
    RowMat dcols;
    for (int n = 0; n < in.batch(); ++n) {
        ConstMatMap dm(dout.item(n).data(), s.cout, hw);
        const bool pointwise = s.k == 1;
        if (dweight != nullptr) {
            MatMap dw(dweight->data(), s.cout, ck);
            if (pointwise) {
                dw.noalias() += dm * ConstMatMap(in.item(n).data(), s.cin, hw).transpose();
            } else {
                im2col(in.item(n), s.cin, h, w, s.k, cols);
                dw.noalias() += dm * cols.transpose();
            }
        }
        if (dbias != nullptr) {
            for (int co = 0; co < s.cout; ++co) {
                (*dbias)[co] += dm.row(co).sum();
            }
        }
        if (din != nullptr) {
            if (pointwise) {
                MatMap di(din->item(n).data(), s.cin, hw);
                di.noalias() += wm.transpose() * dm;
            } else {
                dcols.noalias() = wm.transpose() * dm;
                col2im_add(dcols, s.cin, h, w, s.k, din->item(n));
            }
        }
    }
}

void relu_inplace(Tensor& t) {
    for (double& v : t.data()) {
        v = v > 0.0 ? v : 0.0;
    }
}

// Zeroes gradient where the ReLU output was not positive.
void relu_backward(const Tensor& out, Tensor& grad) {
    auto o = out.data();
    auto g = grad.data();
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (!(o[i] > 0.0)) {
            g[i] = 0.0;
        }
    }
}

Tensor avgpool2(const Tensor& in) {
    Tensor out(in.batch(), in.channels(), in.height() / 2, in.width() / 2);
    for (int n = 0; n < in.batch(); ++n) {
        for (int c = 0; c < in.channels(); ++c) {
            for (int y = 0; y < out.height(); ++y) {
                for (int x = 0; x < out.width(); ++x) {
                    out.at(n, c, y, x) = 0.25 * (in.at(n, c, 2 * y, 2 * x) + in.at(n, c, 2 * y, 2 * x + 1) +
                                                 in.at(n, c, 2 * y + 1, 2 * x) + in.at(n, c, 2 * y + 1, 2 * x + 1));
                }
            }
        }
    }
    return out;
}

void avgpool2_backward(const Tensor& dout, Tensor& din) {
    for (int n = 0; n < dout.batch(); ++n) {
        for (int c = 0; c < dout.channels(); ++c) {
            for (int y = 0; y < dout.height(); ++y) {
                for (int x = 0; x < dout.width(); ++x) {
                    const double g = 0.25 * dout.at(n, c, y, x);
                    din.at(n, c, 2 * y, 2 * x) += g;
                    din.at(n, c, 2 * y, 2 * x + 1) += g;
                    din.at(n, c, 2 * y + 1, 2 * x) += g;
                    din.at(n, c, 2 * y + 1, 2 * x + 1) += g;
                }
            }
        }
    }
}

Tensor upsample2(const Tensor& in) {
    Tensor out(in.batch(), in.channels(), in.height() * 2, in.width() * 2);
    for (int n = 0; n < in.batch(); ++n) {
        for (int c = 0; c < in.channels(); ++c) {
            for (int y = 0; y < out.height(); ++y) {
                for (int x = 0; x < out.width(); ++x) {
                    out.at(n, c, y, x) = in.at(n, c, y / 2, x / 2);
                }
            }
        }
    }
    return out;
}

Tensor upsample2_backward(const Tensor& dout) {
    Tensor din(dout.batch(), dout.channels(), dout.height() / 2, dout.width() / 2);
    for (int n = 0; n < dout.batch(); ++n) {
        for (int c = 0; c < dout.channels(); ++c) {
            for (int y = 0; y < dout.height(); ++y) {
                for (int x = 0; x < dout.width(); ++x) {
                    din.at(n, c, y / 2, x / 2) += dout.at(n, c, y, x);
                }
            }
        }
    }
    return din;
}

std::vector<std::vector<double>> widen(const SegModel& model) {
    std::vector<std::vector<double>> out;
    out.reserve(model.params().size());
    for (const auto& p : model.params()) {
        out.emplace_back(p.values.begin(), p.values.end());
    }
    return out;
}

void check_input(const SegModel& model, const ImageBatch& images) {
    const auto& c = model.config();
    if (images.channels() != c.input_channels) {
        throw DimensionError("forward: expected " + std::to_string(c.input_channels) + " input channel(s), got " +
                             images.shape_string());
    }
    const int m = c.size_multiple();
    if (images.batch() < 1 || images.height() < m || images.width() < m || images.height() % m != 0 ||
        images.width() % m != 0) {
        throw DimensionError("forward: spatial dims of " + images.shape_string() + " must be positive multiples of " +
                             std::to_string(m));
    }
    if (!images.all_finite()) {
        throw InputError("forward: non-finite input pixel");
    }
}

}  // namespace

namespace detail {

struct ForwardCache {
    std::vector<Tensor> enc_in;   // conv inputs per encoder stage
    std::vector<Tensor> enc_out;  // post-ReLU encoder features (skip sources)
    Tensor pooled_last;           // deepest pooled features, before dropout
    std::vector<double> dropout_scale;  // per element of pooled_last; empty when off
    Tensor bottleneck;            // after dropout
    std::vector<Tensor> dec_in;   // conv inputs per decoder stage
    std::vector<Tensor> dec_out;  // post-ReLU decoder features
};

struct Trace {
    const SegModel* model = nullptr;
    ImageBatch input;
    std::vector<std::vector<double>> params;
    ForwardCache cache;
    ProbMap probs;
};

}  // namespace detail

namespace {

Logits run_forward(const SegModel& model, const std::vector<std::vector<double>>& p, const ImageBatch& images,
                   DropoutMode mode, detail::ForwardCache& cache) {
    const auto& c = model.config();
    cache.enc_in.assign(c.depth, {});
    cache.enc_out.assign(c.depth, {});
    cache.dec_in.assign(c.depth, {});
    cache.dec_out.assign(c.depth, {});

    Tensor x = images;
    for (int s = 0; s < c.depth; ++s) {
        cache.enc_in[s] = std::move(x);
        conv_forward(cache.enc_in[s], enc_shape(c, s), p[enc_w(s)], p[enc_w(s) + 1], cache.enc_out[s]);
        relu_inplace(cache.enc_out[s]);
        x = avgpool2(cache.enc_out[s]);
    }
    cache.pooled_last = std::move(x);
    cache.bottleneck = cache.pooled_last;
    cache.dropout_scale.clear();
    if (mode.enabled && c.dropout_rate > 0.0) {
        Rng rng(mode.seed);
        const double keep = 1.0 - c.dropout_rate;
        const double scale = 1.0 / keep;
        auto b = cache.bottleneck.data();
        cache.dropout_scale.resize(b.size());
        for (std::size_t i = 0; i < b.size(); ++i) {
            cache.dropout_scale[i] = rng.uniform() < keep ? scale : 0.0;
            b[i] *= cache.dropout_scale[i];
        }
    }

    x = cache.bottleneck;
    for (int s = c.depth - 1; s >= 0; --s) {
        Tensor up = upsample2(x);
        if (c.skip_connections) {
            up.axpy(1.0, cache.enc_out[s]);
        }
        cache.dec_in[s] = std::move(up);
        conv_forward(cache.dec_in[s], dec_shape(c, s), p[dec_w(c, s)], p[dec_w(c, s) + 1], cache.dec_out[s]);
        relu_inplace(cache.dec_out[s]);
        x = cache.dec_out[s];
    }
    Logits logits;
    conv_forward(x, head_shape(c), p[head_w(c)], p[head_w(c) + 1], logits);
    return logits;
}

struct BackwardResult {
    GradientSet params;
    Tensor input;
};

void run_backward(const detail::Trace& t, const Tensor& dlogits, bool want_params, bool want_input,
                  BackwardResult& acc) {
    const auto& c = t.model->config();
    const auto& p = t.params;
    const auto& cache = t.cache;
    auto dw = [&](std::size_t i) { return want_params ? &acc.params.grads[i] : nullptr; };

    Tensor grad(cache.dec_out[0].batch(), cache.dec_out[0].channels(), cache.dec_out[0].height(),
                cache.dec_out[0].width());
    conv_backward(cache.dec_out[0], head_shape(c), p[head_w(c)], dlogits, dw(head_w(c)), dw(head_w(c) + 1), &grad);

    std::vector<Tensor> skip_grad(c.depth);
    for (int s = 0; s < c.depth; ++s) {
        relu_backward(cache.dec_out[s], grad);
        const Tensor& in = cache.dec_in[s];
        Tensor din(in.batch(), in.channels(), in.height(), in.width());
        conv_backward(in, dec_shape(c, s), p[dec_w(c, s)], grad, dw(dec_w(c, s)), dw(dec_w(c, s) + 1), &din);
        if (c.skip_connections) {
            skip_grad[s] = din;
        }
        grad = upsample2_backward(din);
    }

    // grad is now d(bottleneck)
    if (!cache.dropout_scale.empty()) {
        auto g = grad.data();
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] *= cache.dropout_scale[i];
        }
    }

    for (int s = c.depth - 1; s >= 0; --s) {
        const Tensor& out = cache.enc_out[s];
        Tensor dout(out.batch(), out.channels(), out.height(), out.width());
        avgpool2_backward(grad, dout);
        if (c.skip_connections) {
            dout.axpy(1.0, skip_grad[s]);
        }
        relu_backward(out, dout);
        const Tensor& in = cache.enc_in[s];
        const bool need_din = s > 0 || want_input;
        Tensor din;
        if (need_din) {
            din = Tensor(in.batch(), in.channels(), in.height(), in.width());
        }
        conv_backward(in, enc_shape(c, s), p[enc_w(s)], dout, dw(enc_w(s)), dw(enc_w(s) + 1),
                      need_din ? &din : nullptr);
        grad = std::move(din);
    }
    if (want_input) {
        acc.input.axpy(1.0, grad);
    }
}

// dL/dlogits from dL/dprobs for a softmax output.
Tensor softmax_backward(const ProbMap& probs, const Tensor& dprobs) {
    Tensor out(probs.batch(), probs.channels(), probs.height(), probs.width());
    const int k = probs.channels();
    const std::size_t plane = probs.plane_size();
    for (int n = 0; n < probs.batch(); ++n) {
        auto pp = probs.item(n);
        auto gg = dprobs.item(n);
        auto oo = out.item(n);
        for (std::size_t i = 0; i < plane; ++i) {
            double dot = 0.0;
            for (int ch = 0; ch < k; ++ch) {
                dot += pp[ch * plane + i] * gg[ch * plane + i];
            }
            for (int ch = 0; ch < k; ++ch) {
                oo[ch * plane + i] = pp[ch * plane + i] * (gg[ch * plane + i] - dot);
            }
        }
    }
    return out;
}

}  // namespace

void SegNetConfig::validate() const {
    if (num_classes < 2) {
        throw ConfigError("num_classes must be >= 2");
    }
    if (num_classes > 255) {
        throw ConfigError("num_classes must be < 255 (255 is the unlabeled sentinel)");
    }
    if (depth < 1 || depth > 8) {
        throw ConfigError("depth must be in [1, 8]");
    }
    if (input_channels < 1) {
        throw ConfigError("input_channels must be >= 1");
    }
    if (base_channels < 1) {
        throw ConfigError("base_channels must be >= 1");
    }
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
        throw ConfigError("dropout_rate must be in [0, 1)");
    }
}

SegModel::SegModel(const SegNetConfig& config) : config_(config) {
    config_.validate();
    auto add_conv = [&](const std::string& name, const ConvShape& s) {
        const auto cout = static_cast<std::uint32_t>(s.cout);
        const auto cin = static_cast<std::uint32_t>(s.cin);
        const auto k = static_cast<std::uint32_t>(s.k);
        params_.push_back({name + ".weight", {cout, cin, k, k}, std::vector<float>(std::size_t{cout} * cin * k * k)});
        params_.push_back({name + ".bias", {cout}, std::vector<float>(cout)});
    };
    for (int s = 0; s < config_.depth; ++s) {
        add_conv("enc" + std::to_string(s), enc_shape(config_, s));
    }
    for (int s = 0; s < config_.depth; ++s) {
        add_conv("dec" + std::to_string(s), dec_shape(config_, s));
    }
    add_conv("head", head_shape(config_));
}

std::size_t SegModel::parameter_count() const noexcept {
    std::size_t n = 0;
    for (const auto& p : params_) {
        n += p.values.size();
    }
    return n;
}

const ParamTensor& SegModel::param(const std::string& name) const {
    for (const auto& p : params_) {
        if (p.name == name) {
            return p;
        }
    }
    throw ConfigError("no parameter named " + name);
}

ParamTensor& SegModel::param(const std::string& name) {
    return const_cast<ParamTensor&>(std::as_const(*this).param(name));
}

SegModel init_model(const SegNetConfig& config, std::uint64_t seed) {
    SegModel model(config);
    Rng rng(derive_seed({seed, 0x5E61'4E17ULL}));
    const auto params = model.params();
    for (std::size_t i = 0; i < params.size(); i += 2) {
        ParamTensor& weight = params[i];
        const double fan_in = static_cast<double>(weight.dims[1]) * weight.dims[2] * weight.dims[3];
        const bool is_head = i + 2 == params.size();
        const double bound = is_head ? 1.0 / std::sqrt(fan_in) : std::sqrt(6.0 / fan_in);
        for (float& v : weight.values) {
            v = static_cast<float>(rng.uniform(-bound, bound));
        }
    }
    return model;
}

Logits forward(const SegModel& model, const ImageBatch& images, DropoutMode mode) {
    check_input(model, images);
    detail::ForwardCache cache;
    return run_forward(model, widen(model), images, mode, cache);
}

ProbMap softmax(const Logits& logits) {
    if (!logits.all_finite()) {
        throw InputError("softmax: non-finite logit");
    }
    ProbMap out(logits.batch(), logits.channels(), logits.height(), logits.width());
    const int k = logits.channels();
    const std::size_t plane = logits.plane_size();
    for (int n = 0; n < logits.batch(); ++n) {
        auto in = logits.item(n);
        auto o = out.item(n);
        for (std::size_t i = 0; i < plane; ++i) {
            double mx = in[i];
            for (int c = 1; c < k; ++c) {
                mx = std::max(mx, in[c * plane + i]);
            }
            double sum = 0.0;
            for (int c = 0; c < k; ++c) {
                o[c * plane + i] = std::exp(in[c * plane + i] - mx);
                sum += o[c * plane + i];
            }
            for (int c = 0; c < k; ++c) {
                o[c * plane + i] /= sum;
            }
        }
    }
    return out;
}

LabelMask argmax(const ProbMap& probs) {
    LabelMask out(probs.batch(), probs.height(), probs.width());
    const std::size_t plane = probs.plane_size();
    for (int n = 0; n < probs.batch(); ++n) {
        auto p = probs.item(n);
        for (std::size_t i = 0; i < plane; ++i) {
            int best = 0;
            for (int c = 1; c < probs.channels(); ++c) {
                if (p[c * plane + i] > p[best * plane + i]) {
                    best = c;
                }
            }
            out.labels[n * plane + i] = static_cast<std::uint8_t>(best);
        }
    }
    return out;
}

ProbNode::ProbNode(ProbMap constant) {
    auto t = std::make_shared<detail::Trace>();
    t->probs = std::move(constant);
    trace_ = std::move(t);
}

const ProbMap& ProbNode::value() const noexcept { return trace_->probs; }
const SegModel* ProbNode::model() const noexcept { return trace_->model; }
const ImageBatch* ProbNode::input() const noexcept { return trace_->model ? &trace_->input : nullptr; }

ProbNode trace_forward(const SegModel& model, const ImageBatch& images, DropoutMode mode) {
    check_input(model, images);
    auto t = std::make_shared<detail::Trace>();
    t->model = &model;
    t->input = images;
    t->params = widen(model);
    t->probs = softmax(run_forward(model, t->params, images, mode, t->cache));
    return ProbNode(std::shared_ptr<const detail::Trace>(std::move(t)));
}

void LossNode::accumulate(const ProbNode& node, const Tensor& grad) {
    if (!node.value().same_shape(grad)) {
        throw DimensionError("loss gradient " + grad.shape_string() + " does not match node " +
                             node.value().shape_string());
    }
    for (auto& term : terms_) {
        if (term.node.id() == node.id()) {
            term.grad.axpy(1.0, grad);
            return;
        }
    }
    terms_.push_back({node, grad});
}

const Tensor* LossNode::gradient_wrt(const ProbNode& node) const noexcept {
    for (const auto& term : terms_) {
        if (term.node.id() == node.id()) {
            return &term.grad;
        }
    }
    return nullptr;
}

bool LossNode::depends_on(const SegModel& model) const noexcept {
    return std::any_of(terms_.begin(), terms_.end(), [&](const Term& t) { return t.node.model() == &model; });
}

LossNode& LossNode::operator+=(const LossNode& other) {
    value_ += other.value_;
    for (const auto& term : other.terms_) {
        accumulate(term.node, term.grad);
    }
    return *this;
}

LossNode& LossNode::operator*=(double scale) {
    value_ *= scale;
    for (auto& term : terms_) {
        for (double& g : term.grad.data()) {
            g *= scale;
        }
    }
    return *this;
}

struct BackwardAccess {
    static BackwardResult run(const SegModel& model, const ImageBatch* images, const LossNode& loss,
                              bool want_params) {
        BackwardResult acc;
        if (want_params) {
            for (const auto& p : model.params()) {
                acc.params.grads.emplace_back(p.values.size(), 0.0);
            }
        }
        if (images != nullptr) {
            acc.input = Tensor(images->batch(), images->channels(), images->height(), images->width());
        }
        bool connected = false;
        for (const auto& term : loss.terms_) {
            const detail::Trace& t = *term.node.trace_;
            if (t.model != &model) {
                continue;
            }
            if (images != nullptr && !(t.input == *images)) {
                continue;
            }
            connected = true;
            run_backward(t, softmax_backward(t.probs, term.grad), want_params, images != nullptr, acc);
        }
        if (!connected) {
            throw GraphError(images ? "loss does not depend on the given model input"
                                    : "loss does not depend on the given model");
        }
        return acc;
    }
};

GradientSet param_gradients(const SegModel& model, const LossNode& loss) {
    return BackwardAccess::run(model, nullptr, loss, true).params;
}

ImageGradient input_gradient(const SegModel& model, const ImageBatch& images, const LossNode& loss) {
    return BackwardAccess::run(model, &images, loss, false).input;
}

GradientSet& GradientSet::operator+=(const GradientSet& other) {
    if (grads.empty()) {
        grads = other.grads;
        return *this;
    }
    if (grads.size() != other.grads.size()) {
        throw DimensionError("gradient sets of different models");
    }
    for (std::size_t i = 0; i < grads.size(); ++i) {
        for (std::size_t j = 0; j < grads[i].size(); ++j) {
            grads[i][j] += other.grads[i][j];
        }
    }
    return *this;
}

bool GradientSet::all_finite() const noexcept {
    for (const auto& g : grads) {
        for (double v : g) {
            if (!std::isfinite(v)) {
                return false;
            }
        }
    }
    return true;
}

SegModel apply_update(const SegModel& model, const GradientSet& grads, const OptimizerStep& step,
                      OptimizerState& state) {
    const auto params = model.params();
    if (grads.grads.size() != params.size()) {
        throw DimensionError("apply_update: gradient set does not match model");
    }
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.values.size(), 0.0f);
            state.v.emplace_back(p.values.size(), 0.0f);
        }
    }
    if (state.m.size() != params.size()) {
        throw DimensionError("apply_update: optimizer state does not match model");
    }
    SegModel next = model;
    state.step += 1;
    const auto& a = step.adam;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(a.beta1, t);
    const double bc2 = 1.0 - std::pow(a.beta2, t);
    auto out = next.params();
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (grads.grads[i].size() != params[i].values.size()) {
            throw DimensionError("apply_update: gradient for " + params[i].name + " has wrong size");
        }
        for (std::size_t j = 0; j < params[i].values.size(); ++j) {
            const double g = grads.grads[i][j];
            const double m = a.beta1 * state.m[i][j] + (1.0 - a.beta1) * g;
            const double v = a.beta2 * state.v[i][j] + (1.0 - a.beta2) * g * g;
            state.m[i][j] = static_cast<float>(m);
            state.v[i][j] = static_cast<float>(v);
            const double update = step.learning_rate * (m / bc1) / (std::sqrt(v / bc2) + a.eps);
            out[i].values[j] = static_cast<float>(params[i].values[j] - update);
        }
    }
    return next;
}

namespace {

constexpr std::string_view kCkptMagic = "UASEGCKPT";
constexpr std::string_view kAdamMagic = "ADAMSTATE";

std::vector<std::uint8_t> encode_checkpoint(const SegModel& model, const OptimizerState* optimizer) {
    detail::ByteWriter w;
    w.text(kCkptMagic);
    w.u32(kCheckpointVersion);
    const auto& c = model.config();
    w.u32(static_cast<std::uint32_t>(c.input_channels));
    w.u32(static_cast<std::uint32_t>(c.num_classes));
    w.u32(static_cast<std::uint32_t>(c.base_channels));
    w.u32(static_cast<std::uint32_t>(c.depth));
    w.f64(c.dropout_rate);
    w.u8(c.skip_connections ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(model.params().size()));
    for (const auto& p : model.params()) {
        w.u16(static_cast<std::uint16_t>(p.name.size()));
        w.text(p.name);
        w.u8(static_cast<std::uint8_t>(p.dims.size()));
        for (auto d : p.dims) {
            w.u32(d);
        }
        w.f32s(p.values);
    }
    if (optimizer != nullptr) {
        w.text(kAdamMagic);
        w.u64(optimizer->step);
        w.u32(static_cast<std::uint32_t>(optimizer->m.size()));
        for (std::size_t i = 0; i < optimizer->m.size(); ++i) {
            w.u32(static_cast<std::uint32_t>(optimizer->m[i].size()));
            w.f32s(optimizer->m[i]);
            w.f32s(optimizer->v[i]);
        }
    }
    return w.bytes();
}

}  // namespace

void write_checkpoint(std::ostream& out, const SegModel& model, const OptimizerState* optimizer) {
    const auto bytes = encode_checkpoint(model, optimizer);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("checkpoint write failed");
    }
}

void save_checkpoint(const std::filesystem::path& path, const SegModel& model, const OptimizerState* optimizer) {
    detail::write_file(path, encode_checkpoint(model, optimizer));
}

LoadedCheckpoint read_checkpoint(std::span<const std::uint8_t> bytes) {
    detail::ByteReader r(bytes);
    r.expect(kCkptMagic, "checkpoint magic");
    const std::size_t version_at = r.offset();
    if (r.u32("version") != kCheckpointVersion) {
        throw FormatError("unsupported checkpoint version", version_at);
    }
    SegNetConfig c;
    c.input_channels = static_cast<int>(r.u32("input_channels"));
    c.num_classes = static_cast<int>(r.u32("num_classes"));
    c.base_channels = static_cast<int>(r.u32("base_channels"));
    c.depth = static_cast<int>(r.u32("depth"));
    c.dropout_rate = r.f64("dropout_rate");
    c.skip_connections = r.u8("skip_connections") != 0;
    const std::size_t config_end = r.offset();
    LoadedCheckpoint out;
    try {
        out.model = SegModel(c);
    } catch (const ConfigError& e) {
        throw FormatError(std::string("invalid config block: ") + e.what(), config_end);
    }
    const std::size_t count_at = r.offset();
    const auto count = r.u32("tensor count");
    auto params = out.model.params();
    if (count != params.size()) {
        throw FormatError("tensor count does not match config", count_at);
    }
    for (auto& p : params) {
        const std::size_t at = r.offset();
        const auto len = r.u16("name length");
        const std::string name = r.text(len, "tensor name");
        const auto rank = r.u8("rank");
        std::vector<std::uint32_t> dims(rank);
        for (auto& d : dims) {
            d = r.u32("dims");
        }
        if (name != p.name || dims != p.dims) {
            throw FormatError("unexpected tensor " + name, at);
        }
        r.f32s(p.values, "tensor values");
    }
    if (r.peek(kAdamMagic)) {
        r.expect(kAdamMagic, "optimizer magic");
        OptimizerState s;
        s.step = r.u64("optimizer step");
        const std::size_t n_at = r.offset();
        const auto n = r.u32("optimizer tensor count");
        if (n != params.size()) {
            throw FormatError("optimizer block does not match model", n_at);
        }
        for (std::uint32_t i = 0; i < n; ++i) {
            const std::size_t len_at = r.offset();
            const auto len = r.u32("optimizer tensor size");
            if (len != params[i].values.size()) {
                throw FormatError("optimizer tensor size mismatch", len_at);
            }
            s.m.emplace_back(len);
            s.v.emplace_back(len);
            r.f32s(s.m.back(), "optimizer first moment");
            r.f32s(s.v.back(), "optimizer second moment");
        }
        out.optimizer = std::move(s);
    }
    if (!r.at_end()) {
        throw FormatError("trailing bytes after checkpoint", r.offset());
    }
    return out;
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    return read_checkpoint(detail::read_file(path));
}

}  // namespace uadct
