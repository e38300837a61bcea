#include "uadct/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numeric>

#include "binary_io.hpp"
#include "uadct/error.hpp"
#include "uadct/rng.hpp"

namespace uadct {

namespace {

constexpr std::string_view kDatasetMagic = "UASEGDAT";
constexpr int kMaxPlacementAttempts = 200;

struct Geometry {
    double cx, cy;
    double r_disk, r_ring;
    double cres_x, cres_y, r_cres;
};

std::uint8_t classify(const Geometry& g, int num_classes, double x, double y) {
    const double d0 = std::hypot(x - g.cx, y - g.cy);
    if (d0 <= g.r_disk) {
        return 1;
    }
    if (num_classes >= 3 && d0 <= g.r_ring) {
        return 2;
    }
    if (num_classes >= 4 && std::hypot(x - g.cres_x, y - g.cres_y) <= g.r_cres && d0 > g.r_ring) {
        return 3;
    }
    return 0;
}

Sample draw_sample(const SyntheticSpec& spec, std::uint32_t id) {
    const int h = spec.height;
    const int w = spec.width;
    const double size = std::min(h, w);
    Rng rng(derive_seed({spec.seed, id, 0xDA7AULL}));
    Sample s;
    s.id = id;
    s.mask.assign(static_cast<std::size_t>(h) * w, 0);
    for (int attempt = 0; attempt < kMaxPlacementAttempts; ++attempt) {
        Geometry g{};
        g.r_disk = rng.uniform(0.08, 0.13) * size;
        g.r_ring = g.r_disk + rng.uniform(0.05, 0.08) * size;
        const double theta = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
        const double offset = rng.uniform(0.3, 0.5) * g.r_ring;
        g.r_cres = g.r_ring + rng.uniform(0.04, 0.09) * size;
        double extent = g.r_disk;
        if (spec.num_classes >= 3) {
            extent = g.r_ring;
        }
        if (spec.num_classes >= 4) {
            extent = offset + g.r_cres;
        }
        const double lo = extent;
        const double hi_x = (w - 1) - extent;
        const double hi_y = (h - 1) - extent;
        if (hi_x < lo || hi_y < lo) {
            continue;
        }
        g.cx = rng.uniform(lo, hi_x);
        g.cy = rng.uniform(lo, hi_y);
        g.cres_x = g.cx + offset * std::cos(theta);
        g.cres_y = g.cy + offset * std::sin(theta);

        std::vector<int> counts(static_cast<std::size_t>(spec.num_classes), 0);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const auto c = classify(g, spec.num_classes, x, y);
                s.mask[static_cast<std::size_t>(y) * w + x] = c;
                ++counts[c];
            }
        }
        if (std::all_of(counts.begin(), counts.end(), [](int c) { return c > 0; })) {
            s.image.resize(s.mask.size());
            for (std::size_t i = 0; i < s.mask.size(); ++i) {
                double v = class_intensity(s.mask[i]);
                if (spec.noise_std > 0.0) {
                    v += spec.noise_std * rng.normal();
                }
                s.image[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
            return s;
        }
    }
    throw GenerationError("cannot place all " + std::to_string(spec.num_classes) + " classes on a " +
                          std::to_string(h) + "x" + std::to_string(w) + " canvas");
}

Dataset subset(const Dataset& src, std::span<const std::size_t> indices, bool keep_masks) {
    Dataset out;
    out.height = src.height;
    out.width = src.width;
    out.num_classes = src.num_classes;
    out.has_masks = keep_masks && src.has_masks;
    out.items.reserve(indices.size());
    for (auto i : indices) {
        Sample s = src.items[i];
        if (!out.has_masks) {
            s.mask.clear();
        }
        out.items.push_back(std::move(s));
    }
    return out;
}

std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(std::span<std::size_t>(idx));
    return idx;
}

// Spatial transforms on a single plane stored row-major.
template <typename T>
std::vector<T> flip_h(const std::vector<T>& v, int h, int w) {
    std::vector<T> out(v.size());
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            out[static_cast<std::size_t>(y) * w + x] = v[static_cast<std::size_t>(y) * w + (w - 1 - x)];
        }
    }
    return out;
}

// Rotates a square plane by 90 degrees counter-clockwise.
template <typename T>
std::vector<T> rot90(const std::vector<T>& v, int n) {
    std::vector<T> out(v.size());
    for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
            out[static_cast<std::size_t>(n - 1 - x) * n + y] = v[static_cast<std::size_t>(y) * n + x];
        }
    }
    return out;
}

template <typename T>
std::vector<T> rot180(const std::vector<T>& v) {
    return std::vector<T>(v.rbegin(), v.rend());
}

}  // namespace

void SyntheticSpec::validate() const {
    if (num_classes < 2 || num_classes > 4) {
        throw ConfigError("synthetic data supports num_classes in [2, 4]");
    }
    if (n_images < 0) {
        throw ConfigError("n_images must be >= 0");
    }
    if (height < 1 || width < 1) {
        throw ConfigError("image dims must be positive");
    }
    if (!(noise_std >= 0.0)) {
        throw ConfigError("noise_std must be >= 0");
    }
}

double class_intensity(int cls) {
    static constexpr double kLevels[] = {0.15, 0.85, 0.45, 0.6};
    return cls >= 0 && cls < 4 ? kLevels[cls] : 0.0;
}

void SplitSpec::validate() const {
    if (!(label_ratio > 0.0 && label_ratio <= 1.0)) {
        throw ConfigError("label_ratio must be in (0, 1]");
    }
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    Dataset out;
    out.height = spec.height;
    out.width = spec.width;
    out.num_classes = spec.num_classes;
    out.has_masks = true;
    out.items.reserve(static_cast<std::size_t>(spec.n_images));
    for (int i = 0; i < spec.n_images; ++i) {
        out.items.push_back(draw_sample(spec, static_cast<std::uint32_t>(i)));
    }
    return out;
}

std::pair<Dataset, Dataset> apply_label_ratio(const Dataset& full, const SplitSpec& split) {
    split.validate();
    const std::size_t n = full.size();
    // The small slack keeps e.g. 0.1 * 200 from rounding up to 21.
    const auto n_labeled =
        std::min(n, static_cast<std::size_t>(std::ceil(split.label_ratio * static_cast<double>(n) - 1e-9)));
    const auto order = permutation(n, derive_seed({split.split_seed, 0x1AB1ULL}));
    const std::span<const std::size_t> all(order);
    return {subset(full, all.first(n_labeled), true), subset(full, all.subspan(n_labeled), false)};
}

std::pair<Dataset, Dataset> split_labeled(const Dataset& labeled, std::uint64_t seed) {
    const std::size_t m = labeled.size();
    const auto order = permutation(m, derive_seed({seed, 0x5911ULL}));
    const std::span<const std::size_t> all(order);
    const std::size_t first = (m + 1) / 2;
    return {subset(labeled, all.first(first), true), subset(labeled, all.subspan(first), true)};
}

DatasetBundle build_bundle(const SyntheticSpec& spec, int n_train, int n_test, const SplitSpec& split) {
    if (n_train < 1 || n_test < 0) {
        throw ConfigError("bundle needs n_train >= 1 and n_test >= 0");
    }
    SyntheticSpec all = spec;
    all.n_images = n_train + n_test;
    Dataset full = generate_synthetic(all);

    std::vector<std::size_t> train_idx(static_cast<std::size_t>(n_train));
    std::iota(train_idx.begin(), train_idx.end(), std::size_t{0});
    std::vector<std::size_t> test_idx(static_cast<std::size_t>(n_test));
    std::iota(test_idx.begin(), test_idx.end(), static_cast<std::size_t>(n_train));

    DatasetBundle b;
    b.test = subset(full, test_idx, true);
    const Dataset train = subset(full, train_idx, true);
    auto [labeled, unlabeled] = apply_label_ratio(train, split);
    auto [l1, l2] = split_labeled(labeled, split.split_seed);
    b.labeled_1 = std::move(l1);
    b.labeled_2 = std::move(l2);
    b.unlabeled = std::move(unlabeled);
    b.data_seed = spec.seed;
    b.split_seed = split.split_seed;
    b.label_ratio = split.label_ratio;
    return b;
}

Sample augment(const Sample& sample, int height, int width, std::uint64_t seed, const AugmentConfig& cfg) {
    Rng rng(seed);
    const bool flip = rng.bernoulli(cfg.flip_prob);
    const auto quarter_turns = static_cast<int>(rng.below(4));
    const int crop_h = std::max(1, static_cast<int>(std::lround(cfg.crop_fraction * height)));
    const int crop_w = std::max(1, static_cast<int>(std::lround(cfg.crop_fraction * width)));
    const auto off_y = static_cast<int>(rng.below(static_cast<std::uint64_t>(height - crop_h + 1)));
    const auto off_x = static_cast<int>(rng.below(static_cast<std::uint64_t>(width - crop_w + 1)));

    std::vector<double> img(sample.image.begin(), sample.image.end());
    std::vector<std::uint8_t> mask = sample.mask;
    const bool has_mask = sample.labeled();

    if (flip) {
        img = flip_h(img, height, width);
        if (has_mask) {
            mask = flip_h(mask, height, width);
        }
    }
    if (cfg.rotate) {
        int turns = quarter_turns;
        if (height != width) {
            turns &= ~1;
        }
        if (turns == 2) {
            img = rot180(img);
            if (has_mask) {
                mask = rot180(mask);
            }
        } else if (turns == 1 || turns == 3) {
            for (int t = 0; t < turns; ++t) {
                img = rot90(img, height);
                if (has_mask) {
                    mask = rot90(mask, height);
                }
            }
        }
    }

    Sample out;
    out.id = sample.id;
    out.image.resize(img.size());
    if (cfg.crop && (crop_h < height || crop_w < width)) {
        const double sy = static_cast<double>(crop_h) / height;
        const double sx = static_cast<double>(crop_w) / width;
        if (has_mask) {
            out.mask.resize(mask.size());
        }
        for (int y = 0; y < height; ++y) {
            // Half-pixel centred source coordinates inside the crop window.
            const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, crop_h - 1.0);
            const int y0 = static_cast<int>(std::floor(fy));
            const int y1 = std::min(y0 + 1, crop_h - 1);
            const double ty = fy - y0;
            const int ny = std::min(static_cast<int>((y + 0.5) * sy), crop_h - 1);
            for (int x = 0; x < width; ++x) {
                const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, crop_w - 1.0);
                const int x0 = static_cast<int>(std::floor(fx));
                const int x1 = std::min(x0 + 1, crop_w - 1);
                const double tx = fx - x0;
                auto src = [&](int yy, int xx) {
                    return img[static_cast<std::size_t>(yy + off_y) * width + (xx + off_x)];
                };
                const double v = (1 - ty) * ((1 - tx) * src(y0, x0) + tx * src(y0, x1)) +
                                 ty * ((1 - tx) * src(y1, x0) + tx * src(y1, x1));
                out.image[static_cast<std::size_t>(y) * width + x] = static_cast<float>(v);
                if (has_mask) {
                    const int nx = std::min(static_cast<int>((x + 0.5) * sx), crop_w - 1);
                    out.mask[static_cast<std::size_t>(y) * width + x] =
                        mask[static_cast<std::size_t>(ny + off_y) * width + (nx + off_x)];
                }
            }
        }
    } else {
        for (std::size_t i = 0; i < img.size(); ++i) {
            out.image[i] = static_cast<float>(img[i]);
        }
        out.mask = std::move(mask);
    }
    return out;
}

ImageBatch to_image_batch(std::span<const Sample> samples, int height, int width) {
    ImageBatch b(static_cast<int>(samples.size()), 1, height, width);
    for (std::size_t n = 0; n < samples.size(); ++n) {
        if (samples[n].image.size() != static_cast<std::size_t>(height) * width) {
            throw DimensionError("sample image does not match dataset dims");
        }
        std::copy(samples[n].image.begin(), samples[n].image.end(), b.item(static_cast<int>(n)).begin());
    }
    return b;
}

ImageBatch to_image_batch(const Dataset& data, std::span<const std::size_t> indices) {
    std::vector<Sample> picked;
    picked.reserve(indices.size());
    for (auto i : indices) {
        picked.push_back(data.items.at(i));
    }
    return to_image_batch(picked, data.height, data.width);
}

LabelMask to_label_mask(std::span<const Sample> samples, int height, int width) {
    LabelMask m(static_cast<int>(samples.size()), height, width, LabelMask::kUnlabeled);
    const std::size_t plane = static_cast<std::size_t>(height) * width;
    for (std::size_t n = 0; n < samples.size(); ++n) {
        if (samples[n].labeled()) {
            if (samples[n].mask.size() != plane) {
                throw DimensionError("sample mask does not match dataset dims");
            }
            std::copy(samples[n].mask.begin(), samples[n].mask.end(), m.labels.begin() + static_cast<std::ptrdiff_t>(n * plane));
        }
    }
    return m;
}

std::vector<std::uint8_t> encode_split(const Dataset& data) {
    detail::ByteWriter w;
    w.text(kDatasetMagic);
    w.u32(kDatasetVersion);
    w.u32(static_cast<std::uint32_t>(data.items.size()));
    w.u32(static_cast<std::uint32_t>(data.height));
    w.u32(static_cast<std::uint32_t>(data.width));
    w.u32(static_cast<std::uint32_t>(data.num_classes));
    w.u8(data.has_masks ? 1 : 0);
    const std::size_t plane = static_cast<std::size_t>(data.height) * data.width;
    for (const auto& s : data.items) {
        if (s.image.size() != plane) {
            throw DimensionError("encode_split: image size does not match dataset dims");
        }
        w.f32s(s.image);
    }
    if (data.has_masks) {
        for (const auto& s : data.items) {
            if (s.mask.size() != plane) {
                throw DimensionError("encode_split: labeled split contains an unlabeled sample");
            }
            w.raw(s.mask.data(), s.mask.size());
        }
    }
    return w.bytes();
}

Dataset decode_split(std::span<const std::uint8_t> bytes, const std::vector<std::uint32_t>* ids) {
    detail::ByteReader r(bytes);
    r.expect(kDatasetMagic, "dataset magic");
    const std::size_t version_at = r.offset();
    if (r.u32("version") != kDatasetVersion) {
        throw FormatError("unsupported dataset version", version_at);
    }
    const std::size_t n_at = r.offset();
    const auto n = r.u32("N");
    Dataset d;
    d.height = static_cast<int>(r.u32("H"));
    d.width = static_cast<int>(r.u32("W"));
    d.num_classes = static_cast<int>(r.u32("K"));
    const std::size_t flag_at = r.offset();
    const auto flag = r.u8("has_masks");
    if (flag > 1) {
        throw FormatError("has_masks must be 0 or 1", flag_at);
    }
    d.has_masks = flag == 1;
    const std::size_t plane = static_cast<std::size_t>(d.height) * d.width;
    const std::size_t need = n * plane * (sizeof(float) + (d.has_masks ? 1 : 0));
    if (r.remaining() < need) {
        throw FormatError("truncated dataset payload", r.offset());
    }
    if (ids != nullptr && ids->size() != n) {
        throw FormatError("manifest id list does not match item count", n_at);
    }
    d.items.resize(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        d.items[i].id = ids ? (*ids)[i] : i;
        d.items[i].image.resize(plane);
        r.f32s(d.items[i].image, "intensities");
    }
    if (d.has_masks) {
        for (std::uint32_t i = 0; i < n; ++i) {
            const std::size_t at = r.offset();
            d.items[i].mask.resize(plane);
            r.raw(d.items[i].mask.data(), plane, "labels");
            for (auto l : d.items[i].mask) {
                if (l != LabelMask::kUnlabeled && l >= d.num_classes) {
                    throw FormatError("label out of range in item " + std::to_string(i), at);
                }
            }
        }
    }
    if (!r.at_end()) {
        throw FormatError("trailing bytes after dataset", r.offset());
    }
    return d;
}

namespace {

constexpr const char* kSplitNames[] = {"labeled_1", "labeled_2", "unlabeled", "test"};

}  // namespace

void save_dataset(const DatasetBundle& bundle, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
    }
    const Dataset* splits[] = {&bundle.labeled_1, &bundle.labeled_2, &bundle.unlabeled, &bundle.test};
    nlohmann::ordered_json manifest;
    manifest["format"] = std::string(kDatasetMagic);
    manifest["version"] = kDatasetVersion;
    manifest["seeds"] = {{"data_seed", bundle.data_seed}, {"split_seed", bundle.split_seed}};
    manifest["label_ratio"] = bundle.label_ratio;
    for (std::size_t i = 0; i < 4; ++i) {
        const std::string file = std::string(kSplitNames[i]) + ".bin";
        detail::write_file(dir / file, encode_split(*splits[i]));
        std::vector<std::uint32_t> ids;
        for (const auto& s : splits[i]->items) {
            ids.push_back(s.id);
        }
        manifest["splits"][kSplitNames[i]] = {{"file", file}, {"count", ids.size()}, {"ids", ids}};
    }
    const std::string text = manifest.dump(2) + "\n";
    detail::write_file(dir / "manifest.json", std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

DatasetBundle load_dataset(const std::filesystem::path& dir) {
    const auto raw = detail::read_file(dir / "manifest.json");
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(raw.begin(), raw.end());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("manifest.json: ") + e.what(), 0);
    }
    DatasetBundle b;
    Dataset* splits[] = {&b.labeled_1, &b.labeled_2, &b.unlabeled, &b.test};
    try {
        b.data_seed = manifest.at("seeds").at("data_seed").get<std::uint64_t>();
        b.split_seed = manifest.at("seeds").at("split_seed").get<std::uint64_t>();
        b.label_ratio = manifest.at("label_ratio").get<double>();
        for (std::size_t i = 0; i < 4; ++i) {
            const auto& entry = manifest.at("splits").at(kSplitNames[i]);
            const auto ids = entry.at("ids").get<std::vector<std::uint32_t>>();
            const auto file = entry.at("file").get<std::string>();
            try {
                *splits[i] = decode_split(detail::read_file(dir / file), &ids);
            } catch (const FormatError& e) {
                throw FormatError(file + ": " + e.detail(), e.offset());
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("manifest.json: ") + e.what(), 0);
    }
    return b;
}

}  // namespace uadct
