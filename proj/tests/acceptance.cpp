// Acceptance suite: one PASS/FAIL line per criterion. Exit status is non-zero if any fails.
// Usage: uadct_acceptance [--only 1,2,...]

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <mutex>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "cli.hpp"
#include "pgm_reader.hpp"
#include "support.hpp"
#include "uadct/error.hpp"
#include "uadct/losses.hpp"
#include "uadct/metrics.hpp"
#include "uadct/trainer.hpp"

using namespace uadct;
using namespace uadct::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail += (detail.empty() ? "" : "; ") + what;
        }
    }
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c, d);
    return buf;
}

// ---------------------------------------------------------------- 1

Outcome metrics_oracle() {
    Outcome o;
    Rng rng(101);
    int dsc_bad = 0;
    double hd_worst = 0.0;
    for (int t = 0; t < 1000; ++t) {
        const int h = 1 + static_cast<int>(rng.below(6));
        const int w = 1 + static_cast<int>(rng.below(6));
        const BinaryMask s = random_mask(h, w, rng.uniform(0.0, 0.7), rng);
        const BinaryMask g = random_mask(h, w, rng.uniform(0.0, 0.7), rng);
        dsc_bad += dsc(s, g) != dsc_reference(s, g);
        hd_worst = std::max(hd_worst, std::abs(hd(s, g) - hd_reference(s, g)));
    }
    o.require(dsc_bad == 0, std::to_string(dsc_bad) + " dsc mismatches");
    o.require(hd_worst <= 1e-9, fmt("hd error %.3g", hd_worst));
    o.detail = o.pass ? fmt("1000 pairs, dsc exact, worst hd error %.3g", hd_worst) : o.detail;
    return o;
}

// ---------------------------------------------------------------- 2

Outcome entropy_properties() {
    Outcome o;
    Rng rng(202);
    int bad = 0;
    double worst = 0.0;
    for (int t = 0; t < 10000; ++t) {
        const int k = 2 + static_cast<int>(rng.below(4));
        const int passes = 2 + static_cast<int>(rng.below(7));
        std::vector<ProbMap> samples;
        std::vector<std::vector<double>> raw;
        for (int s = 0; s < passes; ++s) {
            samples.push_back(random_probs(1, k, 1, 1, rng, rng.uniform(0.1, 3.0)));
            std::vector<double> v(k);
            for (int c = 0; c < k; ++c) {
                v[c] = samples.back().at(0, c, 0, 0);
            }
            raw.push_back(v);
        }
        const double u = predictive_entropy(samples)[0];
        worst = std::max(worst, std::abs(u - entropy_reference(raw)));
        bad += u < 0.0 || u > std::log(double(k)) + 1e-12;

        // Class permutation and sample reordering.
        std::vector<int> perm(k);
        std::iota(perm.begin(), perm.end(), 0);
        rng.shuffle(std::span<int>(perm));
        std::vector<ProbMap> permuted;
        for (int s = passes - 1; s >= 0; --s) {
            ProbMap p(1, k, 1, 1);
            for (int c = 0; c < k; ++c) {
                p.at(0, perm[c], 0, 0) = samples[s].at(0, c, 0, 0);
            }
            permuted.push_back(p);
        }
        bad += std::abs(predictive_entropy(permuted)[0] - u) > 1e-12;

        std::vector<ProbMap> uniform(passes, ProbMap(1, k, 1, 1, 1.0 / k));
        bad += std::abs(predictive_entropy(uniform)[0] - std::log(double(k))) > 1e-12;
        ProbMap hot(1, k, 1, 1);
        hot.at(0, static_cast<int>(rng.below(k)), 0, 0) = 1.0;
        bad += predictive_entropy(std::vector<ProbMap>(passes, hot))[0] != 0.0;
    }
    o.require(bad == 0, std::to_string(bad) + " property violations");
    o.require(worst <= 1e-12, fmt("oracle error %.3g", worst));
    o.detail = o.pass ? fmt("10000 pixel sample sets, worst oracle error %.3g", worst) : o.detail;
    return o;
}

// ---------------------------------------------------------------- 3

Outcome gradient_checks() {
    constexpr double kStep = 1e-4;
    Outcome o;
    SegNetConfig cfg;
    cfg.num_classes = 3;
    cfg.base_channels = 2;
    cfg.depth = 1;
    Rng rng(303);
    const ImageBatch x = random_images(2, 1, 4, 4, rng);
    const LabelMask y = random_labels(2, 4, 4, 3, rng);
    WeightMap w(2, 4, 4);
    for (double& v : w.data()) {
        v = rng.uniform(0.1, 1.3);
    }
    const auto d1 = DropoutMode::on(31);
    const auto d2 = DropoutMode::on(32);
    MixedBatch batch{random_images(2, 1, 4, 4, rng), random_labels(2, 4, 4, 3, rng), random_images(2, 1, 4, 4, rng)};
    const FgsmVatGenerator gen(AdvConfig{});
    DiversityOptions dopts;
    dopts.adv_seed_1 = 33;
    dopts.adv_seed_2 = 34;
    dopts.student_mode_1 = DropoutMode::on(35);
    dopts.student_mode_2 = DropoutMode::on(36);

    std::string summary;
    auto report = [&](const std::string& name, const GradCheck& c) {
        o.require(c.pass_fraction() >= 0.99, name + fmt(" %.4f within tolerance", c.pass_fraction()));
        summary += (summary.empty() ? "" : ", ") + name + fmt(" %.1f%%", 100.0 * c.pass_fraction());
    };

    {
        SegModel m = generic_model(cfg, 1);
        const LossNode loss = weighted_ce(trace_forward(m, x, d1), y, w);
        auto value = [&] { return weighted_ce(softmax(forward(m, x, d1)), y, w); };
        report("weighted CE", check_param_gradients(m, param_gradients(m, loss), value, kStep));
        ImageBatch xi = x;
        const LossNode on_input = weighted_ce(trace_forward(m, xi, d1), y, w);
        report("CE input", check_input_gradient(xi, input_gradient(m, xi, on_input), [&] {
                   return weighted_ce(softmax(forward(m, xi, d1)), y, w);
               }, kStep));
    }
    {
        SegModel m1 = generic_model(cfg, 2);
        SegModel m2 = generic_model(cfg, 3);
        const LossNode loss = agreement_loss(trace_forward(m1, x, d1), trace_forward(m2, x, d2), w);
        auto value = [&] { return agreement_loss(softmax(forward(m1, x, d1)), softmax(forward(m2, x, d2)), w); };
        GradCheck c = check_param_gradients(m1, param_gradients(m1, loss), value, kStep);
        c += check_param_gradients(m2, param_gradients(m2, loss), value, kStep);
        report("agreement", c);
    }
    {
        SegModel m1 = generic_model(cfg, 4);
        SegModel m2 = generic_model(cfg, 5);
        const DiversityTerms d = diversity_loss(m1, m2, batch, gen, dopts);
        auto value = [&] {
            return cross_model_ce(d.target_2, softmax(forward(m1, d.adv_2, dopts.student_mode_1))) +
                   cross_model_ce(d.target_1, softmax(forward(m2, d.adv_1, dopts.student_mode_2)));
        };
        GradCheck c = check_param_gradients(m1, param_gradients(m1, d.loss), value, kStep);
        c += check_param_gradients(m2, param_gradients(m2, d.loss), value, kStep);
        report("diversity", c);
    }
    {
        // Composite objective as the trainer builds it.
        SegModel m1 = generic_model(cfg, 6);
        SegModel m2 = generic_model(cfg, 7);
        const double lc = 0.7;
        const double ld = 0.3;
        const LabelMask y2 = random_labels(2, 4, 4, 3, rng);
        const DiversityTerms d = diversity_loss(m1, m2, batch, gen, dopts);
        const LossNode sup = weighted_ce(trace_forward(m1, x, d1), y, w) + weighted_ce(trace_forward(m2, x, d2), y2, w);
        const LossNode agr = agreement_loss(trace_forward(m1, batch.unlabeled, d1),
                                            trace_forward(m2, batch.unlabeled, d2), WeightMap(2, 4, 4, 1.0));
        const LossNode joint = total_loss(sup, agr, d.loss, lc, ld);
        auto value = [&] {
            const double s = weighted_ce(softmax(forward(m1, x, d1)), y, w) + weighted_ce(softmax(forward(m2, x, d2)), y2, w);
            const double a = agreement_loss(softmax(forward(m1, batch.unlabeled, d1)),
                                            softmax(forward(m2, batch.unlabeled, d2)), WeightMap(2, 4, 4, 1.0));
            const double dv = cross_model_ce(d.target_2, softmax(forward(m1, d.adv_2, dopts.student_mode_1))) +
                              cross_model_ce(d.target_1, softmax(forward(m2, d.adv_1, dopts.student_mode_2)));
            return total_loss(s, a, dv, lc, ld);
        };
        GradCheck c = check_param_gradients(m1, param_gradients(m1, joint), value, kStep);
        c += check_param_gradients(m2, param_gradients(m2, joint), value, kStep);
        report("composite", c);
    }
    if (o.pass) {
        o.detail = summary;
    }
    return o;
}

// ---------------------------------------------------------------- 4

Outcome perturbation_contracts() {
    Outcome o;
    SegNetConfig cfg;
    cfg.num_classes = 3;
    cfg.base_channels = 4;
    Rng rng(404);
    int fgsm_violations = 0;
    int increased = 0;
    double vat_worst = 0.0;
    AdvConfig adv;
    adv.clamp_to_unit = false;
    for (int t = 0; t < 100; ++t) {
        const SegModel m = init_model(cfg, 4000 + t);
        const ImageBatch x = random_images(2, 1, 8, 8, rng);
        const LabelMask y = random_labels(2, 8, 8, 3, rng);

        const ImageBatch free = fgsm(m, x, y, adv.eps_fgsm, false);
        const ImageBatch clamped = fgsm(m, x, y, adv.eps_fgsm, true);
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double d = std::abs(free.data()[i] - x.data()[i]);
            fgsm_violations += !(std::abs(d - adv.eps_fgsm) <= 1e-12 || d == 0.0);
            const double c = clamped.data()[i];
            const double dc = std::abs(c - x.data()[i]);
            fgsm_violations += dc > adv.eps_fgsm + 1e-12;
            // Off saturation the clamped step equals the free one.
            fgsm_violations += c > 0.0 && c < 1.0 && c != free.data()[i];
        }

        const WeightMap ones(2, 8, 8, 1.0);
        const double before = weighted_ce(softmax(forward(m, x, DropoutMode::off())), y, ones);
        const double after = weighted_ce(softmax(forward(m, free, DropoutMode::off())), y, ones);
        increased += after > before;

        const ImageBatch v = vat_perturb(m, x, adv, 7000 + t);
        for (int n = 0; n < 2; ++n) {
            double s = 0.0;
            for (std::size_t i = 0; i < x.item_size(); ++i) {
                const double d = v.item(n)[i] - x.item(n)[i];
                s += d * d;
            }
            vat_worst = std::max(vat_worst, std::abs(std::sqrt(s) - adv.eps_vat));
        }
    }
    o.require(fgsm_violations == 0, std::to_string(fgsm_violations) + " FGSM pixel violations");
    o.require(vat_worst <= 1e-5, fmt("VAT norm error %.3g", vat_worst));
    o.require(increased >= 90, std::to_string(increased) + "/100 FGSM trials raised CE");
    if (o.pass) {
        o.detail = "FGSM raised CE in " + std::to_string(increased) + "/100 trials" +
                   fmt(", worst VAT norm error %.3g", vat_worst);
    }
    return o;
}

// ---------------------------------------------------------------- shared small setup

DatasetBundle small_bundle() {
    SyntheticSpec s;
    s.height = 16;
    s.width = 16;
    s.seed = 55;
    return build_bundle(s, 32, 8, {0.25, 5});
}

TrainConfig small_config(Method m, int epochs) {
    TrainConfig c;
    c.method = m;
    c.epochs = epochs;
    c.batch_size_labeled = 2;
    c.batch_size_unlabeled = 8;
    c.model.base_channels = 4;
    c.mc.passes = 3;
    c.global_seed = 9;
    c.heatmap_every = 0;
    return c;
}

bool all_ones(const WeightMap& w) {
    return std::all_of(w.data().begin(), w.data().end(), [](double v) { return v == 1.0; });
}

// ---------------------------------------------------------------- 5

Outcome schedule_and_equivalence() {
    Outcome o;
    const DatasetBundle b = small_bundle();

    TrainConfig ours = small_config(Method::kOurs, 3);
    ours.schedule = {UncertaintySchedule::kNever, UncertaintySchedule::kNever};
    RunReport a = train(ours, b);
    const RunReport d = train(small_config(Method::kDct, 3), b);
    a.method = d.method;
    o.require(a.to_json() == d.to_json(), "DCT differs from OURS with stages disabled");

    // Default schedule: agreement weights switch on at epoch 20.
    TrainConfig sched = small_config(Method::kOurs, 21);
    int early_not_ones = 0;
    int late_ones = 0;
    TrainOptions opts;
    opts.hook = [&](const IterationLog& log) {
        if (log.epoch < 20) {
            early_not_ones += !all_ones(*log.unsup_weights);
        } else {
            late_ones += all_ones(*log.unsup_weights);
        }
    };
    train(sched, b, opts);
    o.require(early_not_ones == 0, std::to_string(early_not_ones) + " non-unit weight maps before epoch 20");
    o.require(late_ones == 0, "weights still all-ones at epoch 20");

    UnsupNormConfig lit;
    lit.mode = UnsupWeightMode::kLiteral;
    lit.beta = 0.7;
    lit.c_norm = 2.0;
    const UncertaintyMap zero(1, 2, 2, 0.0);
    const WeightMap spot = unsup_weight(zero, zero, lit, true);
    o.require(std::all_of(spot.data().begin(), spot.data().end(), [](double v) { return v == -0.7 * 2.0; }),
              fmt("literal spot value %.17g", spot[0]));
    UncertaintyMap u1(1, 1, 1, 0.3);
    UncertaintyMap u2(1, 1, 1, 0.5);
    o.require(unsup_weight(u1, u2, lit, true)[0] == -0.7 * ((0.3 + 0.5) / 2 + 2.0), "literal value at 0.4");
    if (o.pass) {
        o.detail = fmt("DCT == OURS(never, never); unit weights before epoch 20; literal spot %.2f", spot[0]);
    }
    return o;
}

// ---------------------------------------------------------------- 6

Outcome determinism_and_resume() {
    Outcome o;
    const DatasetBundle b = small_bundle();
    TrainConfig cfg = small_config(Method::kOurs, 20);
    cfg.schedule = {0, 5};
    // Enough steps to learn something, and an LR decay after the resume point.
    cfg.batch_size_unlabeled = 4;
    cfg.learning_rate = 5e-3;
    cfg.lr_decay_every = 15;
    const std::string first = train(cfg, b).to_json();
    const RunReport full = RunReport::from_json(train(cfg, b).to_json());
    o.require(first == full.to_json(), "repeated runs differ");

    const fs::path dir = scratch_dir("acceptance_resume");
    {
        Trainer t(cfg, b);
        for (int e = 0; e < 10; ++e) {
            t.run_epoch();
        }
        t.save_state(dir);
    }
    Trainer resumed = Trainer::restore(dir, cfg, b);
    while (!resumed.done()) {
        resumed.run_epoch();
    }
    const RunReport r = resumed.report();
    o.require(r.avg == full.avg && r.vot == full.vot, "resumed metrics differ");
    o.require(r.to_json() == full.to_json(), "resumed report differs");
    if (o.pass) {
        o.detail = fmt("byte-identical reports; resume at epoch 10/20 gives vot DSC %.4f == %.4f", r.vot.mean_dsc,
                       full.vot.mean_dsc);
    }
    return o;
}

// ---------------------------------------------------------------- 7 and 8

struct OrderingRuns {
    std::vector<RunReport> ours, dct, part;
    double seconds = 0.0;
};

OrderingRuns run_ordering_experiment() {
    const std::vector<std::uint64_t> seeds = {1, 2, 3};
    const std::vector<Method> methods = {Method::kOurs, Method::kDct, Method::kPart};
    std::vector<DatasetBundle> bundles;
    for (auto s : seeds) {
        SyntheticSpec spec;
        spec.height = 32;
        spec.width = 32;
        spec.num_classes = 4;
        spec.seed = s;
        SplitSpec split;
        split.label_ratio = 0.1;
        bundles.push_back(build_bundle(spec, 200, 50, split));
    }
    struct Job {
        Method method;
        std::size_t seed_index;
        RunReport report;
    };
    std::vector<Job> jobs;
    // Longest jobs first so the pool drains evenly.
    for (Method m : methods) {
        for (std::size_t i = 0; i < seeds.size(); ++i) {
            jobs.push_back({m, i, {}});
        }
    }
    const auto t0 = std::chrono::steady_clock::now();
    std::atomic<std::size_t> next{0};
    std::mutex failure_lock;
    std::exception_ptr failure;
    auto worker = [&] {
        for (std::size_t j = next++; j < jobs.size(); j = next++) {
            try {
                TrainConfig cfg;
                cfg.method = jobs[j].method;
                cfg.epochs = 40;
                cfg.global_seed = seeds[jobs[j].seed_index];
                cfg.heatmap_every = 0;
                jobs[j].report = train(cfg, bundles[jobs[j].seed_index]);
            } catch (...) {
                std::lock_guard g(failure_lock);
                failure = std::current_exception();
            }
        }
    };
    const unsigned threads = std::max(1u, std::min<unsigned>(std::thread::hardware_concurrency(), jobs.size()));
    std::vector<std::thread> pool;
    for (unsigned i = 0; i < threads; ++i) {
        pool.emplace_back(worker);
    }
    for (auto& t : pool) {
        t.join();
    }
    if (failure) {
        std::rethrow_exception(failure);
    }
    OrderingRuns out;
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    for (auto& j : jobs) {
        (j.method == Method::kOurs ? out.ours : j.method == Method::kDct ? out.dct : out.part).push_back(j.report);
    }
    return out;
}

double mean_vot_dsc(const std::vector<RunReport>& runs) {
    double s = 0.0;
    for (const auto& r : runs) {
        s += r.vot.mean_dsc;
    }
    return s / static_cast<double>(runs.size());
}

std::string per_seed(const std::vector<RunReport>& runs) {
    std::string out;
    for (const auto& r : runs) {
        out += (out.empty() ? "" : "/") + fmt("%.2f", r.vot.mean_dsc);
    }
    return out;
}

Outcome ordering(const OrderingRuns& runs) {
    Outcome o;
    const double ours = mean_vot_dsc(runs.ours);
    const double dct = mean_vot_dsc(runs.dct);
    const double part = mean_vot_dsc(runs.part);
    o.require(ours >= part + 2.0, fmt("OURS %.2f < PART %.2f + 2", ours, part));
    o.require(ours >= dct - 0.5, fmt("OURS %.2f < DCT %.2f - 0.5", ours, dct));
    const std::string failures = o.detail;
    o.detail = fmt("mean vot DSC OURS %.2f, DCT %.2f, PART %.2f, %.0f s", ours, dct, part, runs.seconds) +
               " (per seed OURS " + per_seed(runs.ours) + ", DCT " + per_seed(runs.dct) + ", PART " +
               per_seed(runs.part) + ")" + (failures.empty() ? "" : "; " + failures);
    return o;
}

Outcome uncertainty_dynamics(const OrderingRuns& runs) {
    Outcome o;
    std::string values;
    for (const auto& r : runs.ours) {
        const auto first = r.epochs.front().mean_test_uncertainty();
        const auto last = r.epochs.back().mean_test_uncertainty();
        if (!first || !last) {
            o.require(false, "seed " + std::to_string(r.seed) + " has no logged test uncertainty");
            continue;
        }
        values += (values.empty() ? "" : ", ") + std::string("seed ") + std::to_string(r.seed) +
                  fmt(" %.3f -> %.3f", *first, *last);
        o.require(*last < *first, "seed " + std::to_string(r.seed) + " entropy did not fall");
    }
    o.detail = "mean test entropy epoch 1 -> 40: " + values + (o.pass ? "" : "; " + o.detail);
    return o;
}

// ---------------------------------------------------------------- 9

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

Outcome dataset_and_io() {
    Outcome o;
    Rng rng(909);
    for (int t = 0; t < 5; ++t) {
        SyntheticSpec s;
        s.height = 12 + static_cast<int>(rng.below(12));
        s.width = 12 + static_cast<int>(rng.below(12));
        s.num_classes = 2 + static_cast<int>(rng.below(3));
        s.noise_std = rng.uniform(0.0, 0.2);
        s.seed = rng.next();
        const DatasetBundle b =
            build_bundle(s, 6 + static_cast<int>(rng.below(20)), 1 + static_cast<int>(rng.below(6)),
                         {rng.uniform(0.05, 1.0), rng.next()});
        const fs::path dir = scratch_dir("acceptance_io_" + std::to_string(t));
        save_dataset(b, dir / "a");
        const DatasetBundle back = load_dataset(dir / "a");
        save_dataset(back, dir / "b");
        o.require(back == b, "bundle " + std::to_string(t) + " changed on reload");
        for (const char* f : {"labeled_1.bin", "labeled_2.bin", "unlabeled.bin", "test.bin", "manifest.json"}) {
            o.require(slurp(dir / "a" / f) == slurp(dir / "b" / f), std::string(f) + " not byte-identical");
        }
    }

    // Heatmaps from a short training run, read back with an independent PGM parser.
    const DatasetBundle b = small_bundle();
    TrainConfig cfg = small_config(Method::kOurs, 1);
    cfg.heatmap_every = 1;
    cfg.heatmap_count = 3;
    const fs::path maps = scratch_dir("acceptance_maps");
    TrainOptions opts;
    opts.heatmap_dir = maps;
    train(cfg, b, opts);
    int parsed = 0;
    for (const auto& entry : fs::directory_iterator(maps)) {
        try {
            const PgmImage img = read_pgm(entry.path());
            parsed += img.width == 16 && img.height == 16 && img.maxval == 255;
        } catch (const std::exception& e) {
            o.require(false, entry.path().filename().string() + ": " + e.what());
        }
    }
    o.require(parsed == 6, std::to_string(parsed) + " of 6 heatmaps parsed");

    // Single-seed ablation through the command line: every std must print as 0.00.
    const fs::path root = scratch_dir("acceptance_ablate");
    std::ostringstream out;
    std::ostringstream err;
    const std::vector<std::string> tiny = {"--set", "n_images=12",   "--set", "n_test=3",        "--set",
                                           "image_height=16",        "--set", "image_width=16",  "--set",
                                           "label_ratio=0.5",        "--set", "base_channels=2", "--set",
                                           "epochs=2",               "--set", "mc_passes=2",     "--set",
                                           "batch_size_unlabeled=4", "--set", "heatmap_every=0"};
    std::vector<std::string> gen = {"generate-data", "--out", (root / "data").string()};
    gen.insert(gen.end(), tiny.begin(), tiny.end());
    std::vector<std::string> ab = {"ablate", "--data", (root / "data").string(), "--seeds", "7", "--out",
                                   (root / "out").string()};
    ab.insert(ab.end(), tiny.begin(), tiny.end());
    if (cli::run(gen, out, err) != 0 || cli::run(ab, out, err) != 0) {
        o.require(false, "ablation command failed: " + err.str());
        return o;
    }
    const std::string table = slurp(root / "out" / "summary.txt");
    int cells = 0;
    int nonzero = 0;
    for (std::size_t pos = table.find('('); pos != std::string::npos; pos = table.find('(', pos + 1)) {
        if (table.compare(pos, 3, "(%)") == 0 || table.compare(pos, 4, "(px)") == 0) {
            continue;
        }
        ++cells;
        nonzero += table.compare(pos, 6, "(0.00)") != 0;
    }
    // 4 methods x 2 modes x (3 classes + mean) x (DSC, HD)
    o.require(cells == 64, std::to_string(cells) + " mean(std) cells, expected 64");
    o.require(nonzero == 0, std::to_string(nonzero) + " cells with non-zero std");
    o.require(table.find("Method") != std::string::npos && table.find("vot") != std::string::npos,
              "table header missing");
    if (o.pass) {
        o.detail = "5 bundles byte-exact, 6 heatmaps parsed, 64 mean(std) cells with std 0.00";
    }
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria"};
    std::vector<int> only;
    app.add_option("--only", only, "Criteria to run (default all)")->delimiter(',')->check(CLI::Range(1, 9));
    CLI11_PARSE(app, argc, argv);
    auto wanted = [&](int c) { return only.empty() || std::find(only.begin(), only.end(), c) != only.end(); };

    int failed = 0;
    auto run = [&](int id, const char* name, double budget_s, const std::function<Outcome()>& fn) {
        if (!wanted(id)) {
            return;
        }
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("exception: ") + e.what();
        }
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (budget_s > 0 && s > budget_s) {
            o.pass = false;
            o.detail += fmt(" (over %.0f s budget)", budget_s);
        }
        failed += !o.pass;
        std::printf("[%s] %d %-28s %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str(), s);
        std::fflush(stdout);
    };

    run(1, "metrics oracle", 10, metrics_oracle);
    run(2, "entropy properties", 10, entropy_properties);
    run(3, "gradient checks", 60, gradient_checks);
    run(4, "perturbation contracts", 60, perturbation_contracts);
    run(5, "schedule and equivalence", 0, schedule_and_equivalence);
    run(6, "determinism and resume", 0, determinism_and_resume);
    // Criterion 8 reads the OURS runs trained for criterion 7.
    std::optional<OrderingRuns> runs;
    std::string training_error;
    auto ensure_runs = [&] {
        if (!runs && training_error.empty()) {
            try {
                runs = run_ordering_experiment();
            } catch (const std::exception& e) {
                training_error = e.what();
            }
        }
        if (!runs) {
            throw std::runtime_error("training failed: " + training_error);
        }
        return *runs;
    };
    run(7, "scaled ordering", 30 * 60, [&] { return ordering(ensure_runs()); });
    run(8, "uncertainty dynamics", 0, [&] { return uncertainty_dynamics(ensure_runs()); });
    run(9, "dataset and IO", 0, dataset_and_io);
    std::printf("%s\n", failed == 0 ? "all acceptance criteria passed" : (std::to_string(failed) + " criteria failed").c_str());
    return failed == 0 ? 0 : 1;
}
