#include <doctest.h>

#include <fstream>
#include <json.hpp>
#include <set>

#include "support.hpp"
#include "uadct/data.hpp"
#include "uadct/error.hpp"

using namespace uadct;
using namespace uadct::testing;

namespace {

SyntheticSpec spec_for(int n, int k = 4, double noise = 0.1, std::uint64_t seed = 1) {
    SyntheticSpec s;
    s.n_images = n;
    s.num_classes = k;
    s.noise_std = noise;
    s.seed = seed;
    return s;
}

std::vector<double> class_means(const Sample& s, int k) {
    std::vector<double> sum(k, 0.0);
    std::vector<int> count(k, 0);
    for (std::size_t i = 0; i < s.mask.size(); ++i) {
        sum[s.mask[i]] += s.image[i];
        ++count[s.mask[i]];
    }
    for (int c = 0; c < k; ++c) {
        sum[c] = count[c] ? sum[c] / count[c] : -1.0;
    }
    return sum;
}

std::set<std::uint32_t> ids(const Dataset& d) {
    std::set<std::uint32_t> out;
    for (const auto& s : d.items) {
        out.insert(s.id);
    }
    return out;
}

std::vector<std::uint8_t> file_bytes(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("synthetic images are seeded and contain every class") {
    for (int k = 2; k <= 4; ++k) {
        CAPTURE(k);
        const Dataset a = generate_synthetic(spec_for(12, k));
        const Dataset b = generate_synthetic(spec_for(12, k));
        CHECK(a == b);
        CHECK_FALSE(a == generate_synthetic(spec_for(12, k, 0.1, 2)));
        for (const auto& s : a.items) {
            std::vector<int> count(k, 0);
            for (auto l : s.mask) {
                REQUIRE(l < k);
                ++count[l];
            }
            for (int c = 0; c < k; ++c) {
                CHECK(count[c] > 0);
            }
            for (float v : s.image) {
                CHECK(v >= 0.0f);
                CHECK(v <= 1.0f);
            }
        }
    }
}

TEST_CASE("noiseless images take the documented class intensities") {
    const Dataset d = generate_synthetic(spec_for(5, 4, 0.0));
    for (const auto& s : d.items) {
        for (std::size_t i = 0; i < s.mask.size(); ++i) {
            CHECK(s.image[i] == static_cast<float>(class_intensity(s.mask[i])));
        }
    }
}

TEST_CASE("generation fails cleanly on an impossible canvas or class count") {
    SyntheticSpec tiny = spec_for(1);
    tiny.height = 2;
    tiny.width = 2;
    CHECK_THROWS_AS(generate_synthetic(tiny), GenerationError);
    CHECK_THROWS_AS(generate_synthetic(spec_for(1, 5)), ConfigError);
    CHECK_THROWS_AS(generate_synthetic(spec_for(1, 1)), ConfigError);
}

TEST_CASE("label ratio and labeled split sizes") {
    const Dataset full = generate_synthetic(spec_for(37));
    for (double ratio : {0.1, 0.2, 0.5, 1.0}) {
        CAPTURE(ratio);
        const auto [lab, unl] = apply_label_ratio(full, {ratio, 5});
        const std::size_t expected = static_cast<std::size_t>(std::ceil(ratio * 37 - 1e-9));
        CHECK(lab.size() == expected);
        CHECK(lab.size() + unl.size() == 37);
        CHECK_FALSE(unl.has_masks);
        for (const auto& s : unl.items) {
            CHECK_FALSE(s.labeled());
        }
        std::set<std::uint32_t> all = ids(lab);
        const auto u = ids(unl);
        all.insert(u.begin(), u.end());
        CHECK(all.size() == 37);

        const auto [l1, l2] = split_labeled(lab, 9);
        CHECK(l1.size() == (lab.size() + 1) / 2);
        CHECK(l2.size() == lab.size() / 2);
        for (auto id : ids(l1)) {
            CHECK(ids(l2).count(id) == 0);
        }
    }
    const auto [lab200, unl200] = apply_label_ratio(generate_synthetic(spec_for(200)), {0.1, 2});
    CHECK(lab200.size() == 20);
    CHECK_THROWS_AS(apply_label_ratio(full, {0.0, 1}), ConfigError);
}

TEST_CASE("bundles keep test images apart from training images") {
    const DatasetBundle b = build_bundle(spec_for(0), 30, 10, {0.2, 3});
    CHECK(b.labeled_1.size() + b.labeled_2.size() == 6);
    CHECK(b.unlabeled.size() == 24);
    CHECK(b.test.size() == 10);
    for (auto id : ids(b.test)) {
        CHECK(id >= 30);
    }
    CHECK(b == build_bundle(spec_for(0), 30, 10, {0.2, 3}));
}

TEST_CASE("flip and rotation keep image and mask aligned") {
    const Dataset d = generate_synthetic(spec_for(6, 4, 0.0));
    AugmentConfig cfg;
    cfg.crop = false;
    for (const auto& s : d.items) {
        for (std::uint64_t seed = 0; seed < 8; ++seed) {
            const Sample a = augment(s, d.height, d.width, seed, cfg);
            const auto before = class_means(s, 4);
            const auto after = class_means(a, 4);
            for (int c = 0; c < 4; ++c) {
                CHECK(after[c] == doctest::Approx(before[c]).epsilon(1e-6));
            }
            CHECK(a == augment(s, d.height, d.width, seed, cfg));
        }
    }
}

TEST_CASE("crop-resize keeps region interiors aligned") {
    // Bilinear resampling mixes intensities along region borders, so only pixels whose
    // 3x3 neighbourhood carries one label are compared with the class intensity.
    const Dataset d = generate_synthetic(spec_for(6, 4, 0.0));
    AugmentConfig cfg;
    cfg.flip_prob = 0.0;
    cfg.rotate = false;
    const int h = d.height;
    const int w = d.width;
    for (const auto& s : d.items) {
        for (std::uint64_t seed = 0; seed < 4; ++seed) {
            const Sample a = augment(s, h, w, seed, cfg);
            int interior = 0;
            for (int y = 1; y < h - 1; ++y) {
                for (int x = 1; x < w - 1; ++x) {
                    const auto l = a.mask[y * w + x];
                    bool uniform = true;
                    for (int dy = -1; dy <= 1; ++dy) {
                        for (int dx = -1; dx <= 1; ++dx) {
                            uniform = uniform && a.mask[(y + dy) * w + (x + dx)] == l;
                        }
                    }
                    if (uniform) {
                        ++interior;
                        CHECK(a.image[y * w + x] == doctest::Approx(class_intensity(l)).epsilon(1e-6));
                    }
                }
            }
            CHECK(interior > h * w / 2);
        }
    }
}

TEST_CASE("unlabeled samples augment without a mask") {
    const auto [lab, unl] = apply_label_ratio(generate_synthetic(spec_for(4)), {0.25, 1});
    const Sample a = augment(unl.items[0], unl.height, unl.width, 3);
    CHECK_FALSE(a.labeled());
    CHECK(a.image.size() == unl.items[0].image.size());
}

TEST_CASE("batches mark unlabeled samples with the sentinel") {
    const auto [lab, unl] = apply_label_ratio(generate_synthetic(spec_for(4)), {0.5, 1});
    const std::vector<Sample> mixed = {lab.items[0], unl.items[0]};
    const LabelMask m = to_label_mask(mixed, 32, 32);
    CHECK(m.at(0, 0, 0) != LabelMask::kUnlabeled);
    for (auto v : m.item(1)) {
        CHECK(v == LabelMask::kUnlabeled);
    }
    const std::vector<std::size_t> idx = {1, 0};
    const ImageBatch x = to_image_batch(lab, idx);
    CHECK(x.at(0, 0, 5, 7) == static_cast<double>(lab.items[1].image[5 * 32 + 7]));
}

TEST_CASE("split files round-trip and reject corruption with an offset") {
    Dataset d = generate_synthetic(spec_for(3, 3));
    for (std::uint32_t i = 0; i < 3; ++i) {
        d.items[i].id = i;
    }
    const auto bytes = encode_split(d);
    CHECK(decode_split(bytes) == d);
    CHECK(encode_split(decode_split(bytes)) == bytes);

    auto bad = bytes;
    bad[2] = 'x';
    try {
        decode_split(bad);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(e.offset() == 0);
    }
    const std::vector<std::uint8_t> cut(bytes.begin(), bytes.end() - 5);
    try {
        decode_split(cut);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(e.offset() > 0);
        CHECK(e.offset() <= cut.size());
    }
    auto extra = bytes;
    extra.push_back(7);
    CHECK_THROWS_AS(decode_split(extra), FormatError);
}

TEST_CASE("dataset directories round-trip byte for byte") {
    Rng rng(11);
    for (int trial = 0; trial < 3; ++trial) {
        SyntheticSpec s = spec_for(0, 2 + static_cast<int>(rng.below(3)), rng.uniform(0.0, 0.2), rng.next());
        const int n_train = 8 + static_cast<int>(rng.below(10));
        const DatasetBundle b = build_bundle(s, n_train, 4, {rng.uniform(0.1, 0.9), rng.next()});
        const auto dir = scratch_dir("bundle_" + std::to_string(trial));
        save_dataset(b, dir / "a");
        const DatasetBundle loaded = load_dataset(dir / "a");
        CHECK(loaded == b);
        save_dataset(loaded, dir / "b");
        for (const char* f : {"labeled_1.bin", "labeled_2.bin", "unlabeled.bin", "test.bin", "manifest.json"}) {
            CHECK(file_bytes(dir / "a" / f) == file_bytes(dir / "b" / f));
        }
    }
}

TEST_CASE("dataset loading names the broken file") {
    const auto dir = scratch_dir("bundle_broken");
    save_dataset(build_bundle(spec_for(0), 10, 2, {0.5, 1}), dir);
    {
        std::ofstream f(dir / "test.bin", std::ios::binary | std::ios::trunc);
        f << "UASEGDAT";
    }
    try {
        load_dataset(dir);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("test.bin") != std::string::npos);
        CHECK(e.offset() == 8);
    }
    {
        std::ofstream f(dir / "manifest.json", std::ios::trunc);
        f << "{ not json";
    }
    CHECK_THROWS_AS(load_dataset(dir), FormatError);
    CHECK_THROWS_AS(load_dataset(dir / "missing"), IoError);
}
