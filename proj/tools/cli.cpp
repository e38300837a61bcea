#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "uadct/config.hpp"
#include "uadct/data.hpp"
#include "uadct/error.hpp"
#include "uadct/metrics.hpp"
#include "uadct/report_json.hpp"
#include "uadct/trainer.hpp"

namespace uadct::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

const std::vector<std::string> kDefaultAblation = {"part", "independent", "dct", "ours"};

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f << text;
    if (!f) {
        throw IoError("cannot write " + path.string());
    }
}

RunConfig resolve_config(const std::string& file, const std::vector<std::string>& settings) {
    RunConfig cfg = file.empty() ? RunConfig{} : load_config(file);
    for (const auto& s : settings) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("--set expects key=value, got '" + s + "'");
        }
        auto key = s.substr(0, eq);
        auto value = s.substr(eq + 1);
        auto strip = [](std::string& v) {
            v.erase(0, v.find_first_not_of(' '));
            v.erase(v.find_last_not_of(' ') + 1);
        };
        strip(key);
        strip(value);
        apply_setting(cfg, key, value);
    }
    cfg.validate();
    return cfg;
}

std::vector<MetricsRow> report_rows(const RunReport& r) {
    return {{r.seed, r.method, r.avg}, {r.seed, r.method, r.vot}};
}

/// Trains one configuration and writes the fixed output layout into dir.
RunReport train_into(const RunConfig& cfg, const DatasetBundle& bundle, const fs::path& dir) {
    fs::create_directories(dir);
    write_text(dir / "config.echo", serialize_config(cfg));
    const fs::path heatmaps = dir / "heatmaps";
    fs::create_directories(heatmaps);
    TrainOptions opts;
    opts.checkpoint_dir = dir / "checkpoints";
    opts.heatmap_dir = heatmaps;
    RunReport report = train(cfg.train, bundle, opts);
    // Relative paths keep report.json identical wherever the run directory lives.
    for (auto& p : report.checkpoints) {
        p = fs::path(p).lexically_relative(dir).generic_string();
    }
    write_text(dir / "report.json", report.to_json());
    write_text(dir / "losses.csv", report.losses_csv());
    const auto rows = report_rows(report);
    write_text(dir / "metrics.csv", metrics_csv(rows));
    return report;
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item.erase(0, item.find_first_not_of(' '));
        item.erase(item.find_last_not_of(' ') + 1);
        if (!item.empty()) {
            out.push_back(item);
        }
    }
    return out;
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
    std::vector<std::uint64_t> seeds;
    for (const auto& s : split_list(text)) {
        try {
            std::size_t used = 0;
            const auto v = std::stoull(s, &used);
            if (used != s.size()) {
                throw std::invalid_argument(s);
            }
            seeds.push_back(v);
        } catch (const std::logic_error&) {
            throw ConfigError("invalid seed '" + s + "'");
        }
    }
    if (seeds.empty()) {
        throw ConfigError("--seeds needs at least one seed");
    }
    return seeds;
}

std::string pad(const std::string& s, std::size_t width) {
    return s.size() >= width ? s + " " : s + std::string(width - s.size(), ' ');
}

/// Mean(std) table with one block for DSC and one for HD; rows are method x mode.
std::string summary_table(const std::vector<std::string>& methods,
                          const std::map<std::string, std::array<AggregateReport, 2>>& agg) {
    std::ostringstream out;
    std::vector<int> classes;
    for (const auto& [c, unused] : agg.at(methods.front())[0].per_class_dsc) {
        classes.push_back(c);
    }
    for (const bool is_dsc : {true, false}) {
        out << (is_dsc ? "DSC (%)" : "HD (px)") << '\n';
        out << pad("Method", 14) << pad("Mode", 6);
        for (int c : classes) {
            out << pad("Class " + std::to_string(c), 15);
        }
        out << "Mean\n";
        for (const auto& m : methods) {
            for (int mode = 0; mode < 2; ++mode) {
                const AggregateReport& a = agg.at(m)[mode];
                out << pad(mode == 0 ? m : "", 14) << pad(to_string(a.mode), 6);
                for (int c : classes) {
                    out << pad(format_mean_std(is_dsc ? a.per_class_dsc.at(c) : a.per_class_hd.at(c)), 15);
                }
                out << format_mean_std(is_dsc ? a.mean_dsc : a.mean_hd) << '\n';
            }
        }
        if (is_dsc) {
            out << '\n';
        }
    }
    return out.str();
}

int cmd_generate(const std::string& spec, const std::vector<std::string>& settings, const fs::path& out_dir,
                 std::ostream& out) {
    const RunConfig cfg = resolve_config(spec, settings);
    const DatasetBundle bundle = build_bundle(cfg.data, cfg.data.n_images, cfg.n_test, cfg.split);
    save_dataset(bundle, out_dir);
    const std::size_t m = bundle.labeled_1.size() + bundle.labeled_2.size();
    out << "labeled m = " << m << " (subset 1: " << bundle.labeled_1.size() << ", subset 2: "
        << bundle.labeled_2.size() << "), unlabeled n = " << bundle.unlabeled.size()
        << ", test = " << bundle.test.size() << '\n';
    return kExitOk;
}

int cmd_train(const std::string& config, std::vector<std::string> settings, const fs::path& data_dir,
              const fs::path& out_dir, const std::string& method, const std::string& seed, std::ostream& out) {
    // Flags are applied after --set so they win.
    if (!method.empty()) {
        settings.push_back("method=" + method);
    }
    if (!seed.empty()) {
        settings.push_back("seed=" + seed);
    }
    const RunConfig cfg = resolve_config(config, settings);
    const DatasetBundle bundle = load_dataset(data_dir);
    const RunReport r = train_into(cfg, bundle, out_dir);
    out << std::fixed << std::setprecision(2) << r.method << " seed " << r.seed << ": avg DSC " << r.avg.mean_dsc
        << " HD " << r.avg.mean_hd << ", vot DSC " << r.vot.mean_dsc << " HD " << r.vot.mean_hd << '\n';
    return kExitOk;
}

int cmd_evaluate(const fs::path& ckpt_dir, const fs::path& data_dir, const fs::path& out_file, double spacing,
                 std::ostream& out) {
    const DatasetBundle bundle = load_dataset(data_dir);
    std::vector<SegModel> models;
    for (int i = 1; i <= 2; ++i) {
        models.push_back(load_checkpoint(ckpt_dir / ("model_" + std::to_string(i) + ".ckpt")).model);
    }
    std::string method = "unknown";
    std::uint64_t seed = 0;
    if (fs::exists(ckpt_dir / "trainer_state.json")) {
        std::ifstream f(ckpt_dir / "trainer_state.json");
        try {
            const json state = json::parse(f);
            method = state.at("method").get<std::string>();
            seed = state.at("global_seed").get<std::uint64_t>();
        } catch (const json::exception& e) {
            throw FormatError(std::string("trainer_state.json: ") + e.what(), 0);
        }
    }
    const Evaluation ev = evaluate(models, bundle.test, spacing);
    if (out_file.extension() == ".json") {
        json j;
        j["method"] = method;
        j["seed"] = seed;
        j["avg"] = ev.avg;
        j["vot"] = ev.vot;
        write_text(out_file, j.dump(2) + "\n");
    } else {
        const std::vector<MetricsRow> rows = {{seed, method, ev.avg}, {seed, method, ev.vot}};
        write_text(out_file, metrics_csv(rows));
    }
    out << std::fixed << std::setprecision(2) << "avg DSC " << ev.avg.mean_dsc << " HD " << ev.avg.mean_hd
        << ", vot DSC " << ev.vot.mean_dsc << " HD " << ev.vot.mean_hd << '\n';
    return kExitOk;
}

int cmd_ablate(const std::string& config, const std::vector<std::string>& settings, const fs::path& data_dir,
               const std::string& seeds_text, const std::string& methods_text, const fs::path& out_dir, int jobs,
               std::ostream& out) {
    const RunConfig base = resolve_config(config, settings);
    const auto seeds = parse_seeds(seeds_text);
    const auto methods = methods_text.empty() ? kDefaultAblation : split_list(methods_text);
    for (const auto& m : methods) {
        parse_method(m);
    }
    if (jobs < 1) {
        throw ConfigError("--jobs must be >= 1");
    }
    const DatasetBundle bundle = load_dataset(data_dir);

    struct Cell {
        std::string method;
        std::uint64_t seed;
        RunReport report;
    };
    std::vector<Cell> cells;
    for (const auto& m : methods) {
        for (auto s : seeds) {
            cells.push_back({m, s, {}});
        }
    }
    std::mutex lock;
    std::size_t next = 0;
    std::exception_ptr failure;
    auto worker = [&] {
        while (true) {
            std::size_t i = 0;
            {
                std::lock_guard g(lock);
                if (next >= cells.size() || failure) {
                    return;
                }
                i = next++;
            }
            try {
                RunConfig cfg = base;
                cfg.train.method = parse_method(cells[i].method);
                cfg.train.global_seed = cells[i].seed;
                cells[i].report =
                    train_into(cfg, bundle, out_dir / (cells[i].method + "_seed" + std::to_string(cells[i].seed)));
            } catch (...) {
                std::lock_guard g(lock);
                if (!failure) {
                    failure = std::current_exception();
                }
            }
        }
    };
    std::vector<std::thread> pool;
    for (int j = 0; j < std::min<int>(jobs, static_cast<int>(cells.size())); ++j) {
        pool.emplace_back(worker);
    }
    for (auto& t : pool) {
        t.join();
    }
    if (failure) {
        std::rethrow_exception(failure);
    }

    std::vector<MetricsRow> rows;
    std::map<std::string, std::array<AggregateReport, 2>> agg;
    json summary;
    summary["seeds"] = seeds;
    summary["methods"] = json::object();
    for (const auto& m : methods) {
        std::vector<MetricsReport> avg;
        std::vector<MetricsReport> vot;
        for (const auto& c : cells) {
            if (c.method == m) {
                avg.push_back(c.report.avg);
                vot.push_back(c.report.vot);
                for (const auto& row : report_rows(c.report)) {
                    rows.push_back(row);
                }
            }
        }
        agg[m] = {aggregate_runs(avg), aggregate_runs(vot)};
        summary["methods"][m] = {{"avg", agg[m][0]}, {"vot", agg[m][1]}};
    }
    const std::string table = summary_table(methods, agg);
    write_text(out_dir / "metrics.csv", metrics_csv(rows));
    write_text(out_dir / "summary.json", summary.dump(2) + "\n");
    write_text(out_dir / "summary.txt", table);
    out << table;
    return kExitOk;
}

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const GenerationError*>(&e)) {
        return kExitConfig;
    }
    if (dynamic_cast<const NumericError*>(&e)) {
        return kExitNumeric;
    }
    if (dynamic_cast<const FormatError*>(&e) || dynamic_cast<const IoError*>(&e) ||
        dynamic_cast<const DimensionError*>(&e) || dynamic_cast<const LabelError*>(&e) ||
        dynamic_cast<const InputError*>(&e)) {
        return kExitData;
    }
    return kExitFailure;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Uncertainty-aware co-training for semi-supervised segmentation", "uadct"};
    app.require_subcommand(1);

    std::string config;
    std::vector<std::string> settings;
    std::string data_dir;
    std::string out_path;

    auto* gen = app.add_subcommand("generate-data", "Generate a synthetic dataset bundle");
    gen->add_option("--spec", config, "Config file with the data keys")->check(CLI::ExistingFile);
    gen->add_option("--set", settings, "Override a config key (key=value)");
    gen->add_option("--out", out_path, "Output directory")->required();

    auto* tr = app.add_subcommand("train", "Train a model pair");
    std::string method;
    std::string seed;
    tr->add_option("--config", config, "Config file")->check(CLI::ExistingFile);
    tr->add_option("--set", settings, "Override a config key (key=value)");
    tr->add_option("--data", data_dir, "Dataset directory")->required();
    tr->add_option("--out", out_path, "Output directory")->required();
    tr->add_option("--method", method, "part, independent, dct, ours, sup-unc or unsup-unc");
    tr->add_option("--seed", seed, "Training seed");

    auto* ev = app.add_subcommand("evaluate", "Score saved checkpoints on the test split");
    std::string ckpt_dir;
    double spacing = 1.0;
    ev->add_option("--checkpoint", ckpt_dir, "Checkpoint directory")->required();
    ev->add_option("--data", data_dir, "Dataset directory")->required();
    ev->add_option("--out", out_path, "Output file (.csv or .json)")->required();
    ev->add_option("--spacing", spacing, "Pixel spacing for HD")->check(CLI::PositiveNumber);

    auto* ab = app.add_subcommand("ablate", "Run methods x seeds and tabulate mean(std)");
    std::string seeds = "1,2,3";
    std::string methods;
    int jobs = 1;
    ab->add_option("--config", config, "Config file")->check(CLI::ExistingFile);
    ab->add_option("--set", settings, "Override a config key (key=value)");
    ab->add_option("--data", data_dir, "Dataset directory")->required();
    ab->add_option("--seeds", seeds, "Comma-separated seeds");
    ab->add_option("--methods", methods, "Comma-separated methods (default part,independent,dct,ours)");
    ab->add_option("--jobs", jobs, "Cells trained in parallel");
    ab->add_option("--out", out_path, "Output directory")->required();

    auto* pc = app.add_subcommand("print-config", "Print the effective configuration");
    pc->add_option("--config", config, "Config file")->check(CLI::ExistingFile);
    pc->add_option("--set", settings, "Override a config key (key=value)");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (gen->parsed()) {
            return cmd_generate(config, settings, out_path, out);
        }
        if (tr->parsed()) {
            return cmd_train(config, settings, data_dir, out_path, method, seed, out);
        }
        if (ev->parsed()) {
            return cmd_evaluate(ckpt_dir, data_dir, out_path, spacing, out);
        }
        if (ab->parsed()) {
            return cmd_ablate(config, settings, data_dir, seeds, methods, out_path, jobs, out);
        }
        if (pc->parsed()) {
            out << serialize_config(resolve_config(config, settings));
            return kExitOk;
        }
    } catch (const std::exception& e) {
        err << "uadct: error: " << e.what() << '\n';
        return exit_code_for(e);
    }
    return kExitFailure;
}

}  // namespace uadct::cli
