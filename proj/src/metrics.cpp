#include "uadct/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "uadct/error.hpp"

namespace uadct {

namespace {

constexpr double kFar = 1e20;

// Felzenszwalb-Huttenlocher lower envelope of parabolas, one line at a time.
void edt_1d(const double* f, int n, std::ptrdiff_t stride, double* out, std::vector<int>& v, std::vector<double>& z,
            std::vector<double>& buf) {
    v.resize(n);
    z.resize(static_cast<std::size_t>(n) + 1);
    buf.resize(n);
    for (int q = 0; q < n; ++q) {
        buf[q] = f[q * stride];
    }
    int k = 0;
    v[0] = 0;
    z[0] = -kFar;
    z[1] = kFar;
    for (int q = 1; q < n; ++q) {
        double s = 0.0;
        while (true) {
            const int p = v[k];
            s = ((buf[q] + static_cast<double>(q) * q) - (buf[p] + static_cast<double>(p) * p)) / (2.0 * (q - p));
            if (s <= z[k] && k > 0) {
                --k;
                continue;
            }
            break;
        }
        if (s <= z[k]) {
            // k == 0 and the new parabola dominates everywhere.
            v[0] = q;
            z[0] = -kFar;
            z[1] = kFar;
            continue;
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = kFar;
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[k + 1] < q) {
            ++k;
        }
        const double d = q - v[k];
        out[q * stride] = d * d + buf[v[k]];
    }
}

void check_pair(const BinaryMask& s, const BinaryMask& g) {
    if (s.height != g.height || s.width != g.width || s.pixels.size() != g.pixels.size()) {
        throw DimensionError("binary masks differ in size");
    }
}

// max over foreground of a of the distance to the nearest foreground pixel of b.
double directed(const BinaryMask& a, const std::vector<double>& dist_b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
        if (a.pixels[i] != 0) {
            worst = std::max(worst, dist_b[i]);
        }
    }
    return std::sqrt(worst);
}

}  // namespace

std::size_t BinaryMask::count() const noexcept {
    return static_cast<std::size_t>(std::count_if(pixels.begin(), pixels.end(), [](auto p) { return p != 0; }));
}

double dsc(const BinaryMask& s, const BinaryMask& g) {
    check_pair(s, g);
    std::size_t inter = 0;
    std::size_t ns = 0;
    std::size_t ng = 0;
    for (std::size_t i = 0; i < s.pixels.size(); ++i) {
        const bool a = s.pixels[i] != 0;
        const bool b = g.pixels[i] != 0;
        ns += a;
        ng += b;
        inter += a && b;
    }
    if (ns + ng == 0) {
        return 1.0;
    }
    return 2.0 * static_cast<double>(inter) / static_cast<double>(ns + ng);
}

double diagonal_penalty(int height, int width) { return std::hypot(static_cast<double>(height), width); }

std::vector<double> squared_distance_transform(const BinaryMask& m) {
    const int h = m.height;
    const int w = m.width;
    std::vector<double> grid(m.pixels.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
        grid[i] = m.pixels[i] != 0 ? 0.0 : kFar;
    }
    std::vector<double> tmp(grid.size());
    std::vector<int> v;
    std::vector<double> z;
    std::vector<double> buf;
    for (int x = 0; x < w; ++x) {
        edt_1d(grid.data() + x, h, w, tmp.data() + x, v, z, buf);
    }
    for (int y = 0; y < h; ++y) {
        edt_1d(tmp.data() + static_cast<std::ptrdiff_t>(y) * w, w, 1, grid.data() + static_cast<std::ptrdiff_t>(y) * w,
               v, z, buf);
    }
    for (double& d : grid) {
        if (d >= kFar / 2) {
            d = std::numeric_limits<double>::infinity();
        }
    }
    return grid;
}

double hd(const BinaryMask& s, const BinaryMask& g, double spacing) {
    check_pair(s, g);
    const bool se = s.empty();
    const bool ge = g.empty();
    if (se && ge) {
        return 0.0;
    }
    if (se || ge) {
        return diagonal_penalty(s.height, s.width) * spacing;
    }
    const double d_sg = directed(s, squared_distance_transform(g));
    const double d_gs = directed(g, squared_distance_transform(s));
    return std::max(d_sg, d_gs) * spacing;
}

const char* to_string(EnsembleMode mode) { return mode == EnsembleMode::kAvg ? "avg" : "vot"; }

MetricsReport per_class_report(const LabelMask& pred, const LabelMask& gt, int num_classes, double spacing) {
    if (pred.batch != gt.batch || pred.height != gt.height || pred.width != gt.width) {
        throw DimensionError("per_class_report: prediction and ground truth differ in shape");
    }
    if (num_classes < 2) {
        throw ConfigError("per_class_report needs at least 2 classes");
    }
    if (gt.batch < 1) {
        throw DimensionError("per_class_report: empty batch");
    }
    MetricsReport r;
    for (int c = 1; c < num_classes; ++c) {
        double dsc_sum = 0.0;
        double hd_sum = 0.0;
        for (int n = 0; n < gt.batch; ++n) {
            BinaryMask s(gt.height, gt.width);
            BinaryMask g(gt.height, gt.width);
            auto pp = pred.item(n);
            auto gg = gt.item(n);
            for (std::size_t i = 0; i < pp.size(); ++i) {
                s.pixels[i] = pp[i] == c;
                g.pixels[i] = gg[i] == c;
            }
            dsc_sum += dsc(s, g);
            hd_sum += hd(s, g, spacing);
        }
        r.per_class_dsc[c] = 100.0 * dsc_sum / gt.batch;
        r.per_class_hd[c] = hd_sum / gt.batch;
    }
    for (int c = 1; c < num_classes; ++c) {
        r.mean_dsc += r.per_class_dsc[c];
        r.mean_hd += r.per_class_hd[c];
    }
    r.mean_dsc /= (num_classes - 1);
    r.mean_hd /= (num_classes - 1);
    return r;
}

LabelMask ensemble_vote(const ProbMap& p1, const ProbMap& p2) {
    if (!p1.same_shape(p2)) {
        throw DimensionError("ensemble_vote: " + p1.shape_string() + " vs " + p2.shape_string());
    }
    LabelMask out(p1.batch(), p1.height(), p1.width());
    const std::size_t plane = p1.plane_size();
    for (int n = 0; n < p1.batch(); ++n) {
        auto a = p1.item(n);
        auto b = p2.item(n);
        for (std::size_t i = 0; i < plane; ++i) {
            int best = 0;
            double best_v = 0.5 * (a[i] + b[i]);
            for (int c = 1; c < p1.channels(); ++c) {
                const double v = 0.5 * (a[c * plane + i] + b[c * plane + i]);
                if (v > best_v) {
                    best = c;
                    best_v = v;
                }
            }
            out.labels[n * plane + i] = static_cast<std::uint8_t>(best);
        }
    }
    return out;
}

MetricsReport avg_individual(std::span<const MetricsReport> reports) {
    if (reports.empty()) {
        throw DimensionError("avg_individual: no reports");
    }
    MetricsReport out;
    out.mode = EnsembleMode::kAvg;
    const double inv = 1.0 / static_cast<double>(reports.size());
    for (const auto& r : reports) {
        if (r.per_class_dsc.size() != reports.front().per_class_dsc.size()) {
            throw DimensionError("avg_individual: reports cover different classes");
        }
        for (const auto& [c, v] : r.per_class_dsc) {
            out.per_class_dsc[c] += v * inv;
        }
        for (const auto& [c, v] : r.per_class_hd) {
            out.per_class_hd[c] += v * inv;
        }
        out.mean_dsc += r.mean_dsc * inv;
        out.mean_hd += r.mean_hd * inv;
    }
    return out;
}

SeedStat seed_stat(std::span<const double> values) {
    SeedStat s;
    if (values.empty()) {
        return s;
    }
    for (double v : values) {
        s.mean += v;
    }
    s.mean /= static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) {
            ss += (v - s.mean) * (v - s.mean);
        }
        s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    return s;
}

AggregateReport aggregate_runs(std::span<const MetricsReport> runs) {
    AggregateReport out;
    out.runs = runs.size();
    if (runs.empty()) {
        return out;
    }
    out.mode = runs.front().mode;
    auto collect = [&](auto getter) {
        std::vector<double> v;
        for (const auto& r : runs) {
            v.push_back(getter(r));
        }
        return seed_stat(v);
    };
    for (const auto& [c, unused] : runs.front().per_class_dsc) {
        out.per_class_dsc[c] = collect([c = c](const MetricsReport& r) { return r.per_class_dsc.at(c); });
        out.per_class_hd[c] = collect([c = c](const MetricsReport& r) { return r.per_class_hd.at(c); });
    }
    out.mean_dsc = collect([](const MetricsReport& r) { return r.mean_dsc; });
    out.mean_hd = collect([](const MetricsReport& r) { return r.mean_hd; });
    return out;
}

std::string metrics_csv(std::span<const MetricsRow> rows) {
    std::ostringstream out;
    out.precision(17);
    out << "run_seed,method,mode,class,dsc,hd\n";
    for (const auto& row : rows) {
        const auto& r = row.report;
        for (const auto& [c, d] : r.per_class_dsc) {
            out << row.run_seed << ',' << row.method << ',' << to_string(r.mode) << ',' << c << ',' << d << ','
                << r.per_class_hd.at(c) << '\n';
        }
        out << row.run_seed << ',' << row.method << ',' << to_string(r.mode) << ",mean," << r.mean_dsc << ','
            << r.mean_hd << '\n';
    }
    return out.str();
}

std::string format_mean_std(const SeedStat& s) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f(%.2f)", s.mean, s.std);
    return buf;
}

}  // namespace uadct
