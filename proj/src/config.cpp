#include "uadct/config.hpp"

#include <charconv>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "binary_io.hpp"
#include "uadct/error.hpp"

namespace uadct {

namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(std::string_view v) {
    T out{};
    const auto* end = v.data() + v.size();
    const auto [ptr, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || ptr != end || v.empty()) {
        throw ConfigError("invalid number '" + std::string(v) + "'");
    }
    return out;
}

bool parse_bool(std::string_view v) {
    if (v == "true" || v == "1" || v == "yes") {
        return true;
    }
    if (v == "false" || v == "0" || v == "no") {
        return false;
    }
    throw ConfigError("invalid boolean '" + std::string(v) + "' (expected true or false)");
}

std::string fmt(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

std::string fmt(bool v) { return v ? "true" : "false"; }

template <typename T>
std::string fmt_int(T v) {
    return std::to_string(v);
}

int parse_epoch_or_never(std::string_view v) {
    if (v == "never") {
        return UncertaintySchedule::kNever;
    }
    return parse_number<int>(v);
}

std::string fmt_epoch_or_never(int v) { return v == UncertaintySchedule::kNever ? "never" : std::to_string(v); }

struct Entry {
    const char* name;
    const char* description;
    std::function<void(RunConfig&, std::string_view)> set;
    std::function<std::string(const RunConfig&)> get;
};

#define UADCT_INT(key, field, desc)                                                             \
    Entry {                                                                                     \
        key, desc, [](RunConfig& c, std::string_view v) { c.field = parse_number<int>(v); },     \
            [](const RunConfig& c) { return fmt_int(c.field); }                                 \
    }
#define UADCT_U64(key, field, desc)                                                                   \
    Entry {                                                                                           \
        key, desc, [](RunConfig& c, std::string_view v) { c.field = parse_number<std::uint64_t>(v); }, \
            [](const RunConfig& c) { return fmt_int(c.field); }                                       \
    }
#define UADCT_REAL(key, field, desc)                                                              \
    Entry {                                                                                       \
        key, desc, [](RunConfig& c, std::string_view v) { c.field = parse_number<double>(v); },    \
            [](const RunConfig& c) { return fmt(c.field); }                                       \
    }
#define UADCT_BOOL(key, field, desc)                                                          \
    Entry {                                                                                   \
        key, desc, [](RunConfig& c, std::string_view v) { c.field = parse_bool(v); },          \
            [](const RunConfig& c) { return fmt(c.field); }                                   \
    }

const std::vector<Entry>& entries() {
    static const std::vector<Entry> table = {
        // data
        UADCT_INT("n_images", data.n_images, "training images to generate"),
        UADCT_INT("n_test", n_test, "test images to generate"),
        UADCT_INT("image_height", data.height, "image height in pixels"),
        UADCT_INT("image_width", data.width, "image width in pixels"),
        Entry{"num_classes", "classes including background (2..4), shared by data and model",
              [](RunConfig& c, std::string_view v) {
                  c.data.num_classes = parse_number<int>(v);
                  c.train.model.num_classes = c.data.num_classes;
              },
              [](const RunConfig& c) { return fmt_int(c.data.num_classes); }},
        UADCT_REAL("noise_std", data.noise_std, "Gaussian pixel noise"),
        UADCT_U64("data_seed", data.seed, "seed of the synthetic images"),
        UADCT_REAL("label_ratio", split.label_ratio, "fraction of training images that keep masks"),
        UADCT_U64("split_seed", split.split_seed, "seed of the labeled/unlabeled partition"),
        // model
        UADCT_INT("input_channels", train.model.input_channels, "image channels"),
        UADCT_INT("base_channels", train.model.base_channels, "width of the first encoder stage"),
        UADCT_INT("depth", train.model.depth, "number of down/up-sampling stages"),
        UADCT_REAL("dropout_rate", train.model.dropout_rate, "rate of the dropout layer between encoder and decoder"),
        UADCT_BOOL("skip_connections", train.model.skip_connections, "additive encoder-decoder skips"),
        // training
        Entry{"method", "part, independent, dct, ours, sup-unc or unsup-unc",
              [](RunConfig& c, std::string_view v) { c.train.method = parse_method(v); },
              [](const RunConfig& c) { return std::string(to_string(c.train.method)); }},
        UADCT_INT("epochs", train.epochs, "training epochs"),
        UADCT_INT("batch_size_labeled", train.batch_size_labeled, "labeled images per model per step"),
        UADCT_INT("batch_size_unlabeled", train.batch_size_unlabeled, "unlabeled images per step"),
        UADCT_REAL("learning_rate", train.learning_rate, "Adam learning rate"),
        UADCT_INT("lr_decay_every", train.lr_decay_every, "epochs between learning-rate decays (0 = never)"),
        UADCT_REAL("lr_decay_factor", train.lr_decay_factor, "learning-rate multiplier per decay"),
        UADCT_U64("seed", train.global_seed, "seed of initialization, dropout, sampling and augmentation"),
        // uncertainty
        UADCT_INT("mc_passes", train.mc.passes, "stochastic forward passes per uncertainty map"),
        Entry{"sup_start_epoch", "first epoch of uncertainty-weighted supervision, or never",
              [](RunConfig& c, std::string_view v) { c.train.schedule.sup_start_epoch = parse_epoch_or_never(v); },
              [](const RunConfig& c) { return fmt_epoch_or_never(c.train.schedule.sup_start_epoch); }},
        Entry{"unsup_start_epoch", "first epoch of uncertainty-weighted agreement, or never",
              [](RunConfig& c, std::string_view v) { c.train.schedule.unsup_start_epoch = parse_epoch_or_never(v); },
              [](const RunConfig& c) { return fmt_epoch_or_never(c.train.schedule.unsup_start_epoch); }},
        UADCT_REAL("sup_weight_floor", train.sup_weight_floor, "lower bound of supervised pixel weights"),
        Entry{"unsup_weight_mode", "literal (-beta (u + c)) or rectified (max(0, beta (c - u)))",
              [](RunConfig& c, std::string_view v) {
                  if (v == "literal") {
                      c.train.unsup_norm.mode = UnsupWeightMode::kLiteral;
                  } else if (v == "rectified") {
                      c.train.unsup_norm.mode = UnsupWeightMode::kRectified;
                  } else {
                      throw ConfigError("invalid unsup_weight_mode '" + std::string(v) + "'");
                  }
              },
              [](const RunConfig& c) {
                  return std::string(c.train.unsup_norm.mode == UnsupWeightMode::kLiteral ? "literal" : "rectified");
              }},
        UADCT_REAL("unsup_beta", train.unsup_norm.beta, "scale of the agreement weight"),
        UADCT_REAL("unsup_c_norm", train.unsup_norm.c_norm, "offset of the agreement weight"),
        // loss weights
        UADCT_REAL("lambda_cot_max", train.weights.lambda_cot_max, "agreement weight after ramp-up"),
        UADCT_REAL("lambda_div_max", train.weights.lambda_div_max, "diversity weight after ramp-up"),
        Entry{"ramp_epochs", "ramp-up length in epochs, or auto (10% of epochs)",
              [](RunConfig& c, std::string_view v) {
                  if (v == "auto") {
                      c.train.weights.ramp_epochs.reset();
                  } else {
                      c.train.weights.ramp_epochs = parse_number<int>(v);
                  }
              },
              [](const RunConfig& c) {
                  return c.train.weights.ramp_epochs ? std::to_string(*c.train.weights.ramp_epochs) : std::string("auto");
              }},
        // adversarial examples
        UADCT_REAL("eps_fgsm", train.adv.eps_fgsm, "FGSM step size (L-infinity)"),
        UADCT_REAL("eps_vat", train.adv.eps_vat, "VAT radius (per-image L2, pixel units)"),
        UADCT_REAL("vat_xi", train.adv.vat_xi, "VAT finite-difference probe length"),
        UADCT_INT("vat_power_iters", train.adv.vat_power_iters, "VAT power iterations"),
        UADCT_BOOL("clamp_to_unit", train.adv.clamp_to_unit, "clamp adversarial images to [0, 1]"),
        // augmentation
        UADCT_BOOL("augment", train.augment, "augment training batches"),
        UADCT_REAL("aug_flip_prob", train.augmentation.flip_prob, "probability of a horizontal flip"),
        UADCT_BOOL("aug_rotate", train.augmentation.rotate, "random quarter-turn rotations"),
        UADCT_BOOL("aug_crop", train.augmentation.crop, "random crop resized back to full size"),
        UADCT_REAL("aug_crop_fraction", train.augmentation.crop_fraction, "crop side relative to the image"),
        // logging
        UADCT_INT("uncertainty_log_every", train.uncertainty_log_every, "epochs between test uncertainty logs (0 = off)"),
        UADCT_INT("heatmap_every", train.heatmap_every, "epochs between heatmap exports (0 = off)"),
        UADCT_INT("heatmap_count", train.heatmap_count, "test images exported as heatmaps"),
    };
    return table;
}

#undef UADCT_INT
#undef UADCT_U64
#undef UADCT_REAL
#undef UADCT_BOOL

const Entry& find_entry(std::string_view key) {
    for (const auto& e : entries()) {
        if (key == e.name) {
            return e;
        }
    }
    throw ConfigError("unknown configuration key '" + std::string(key) + "'");
}

}  // namespace

void RunConfig::validate() const {
    data.validate();
    split.validate();
    train.validate();
    if (n_test < 1) {
        throw ConfigError("n_test must be >= 1");
    }
    if (train.model.num_classes != data.num_classes) {
        throw ConfigError("model and data disagree on num_classes");
    }
}

std::vector<ConfigKey> config_keys() {
    const RunConfig defaults;
    std::vector<ConfigKey> out;
    for (const auto& e : entries()) {
        out.push_back({e.name, e.get(defaults), e.description});
    }
    return out;
}

void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value) {
    const Entry& e = find_entry(key);
    try {
        e.set(cfg, value);
    } catch (const ConfigError& err) {
        throw ConfigError(std::string(key) + ": " + err.what());
    }
}

RunConfig parse_config(std::string_view text) {
    RunConfig cfg;
    std::set<std::string, std::less<>> seen;
    int line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto nl = text.find('\n', pos);
        std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) {
            line = line.substr(0, hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        const std::string where = "line " + std::to_string(line_no) + ": ";
        if (eq == std::string_view::npos) {
            throw ConfigError(where + "expected 'key = value'");
        }
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty()) {
            throw ConfigError(where + "expected 'key = value'");
        }
        if (!seen.insert(std::string(key)).second) {
            throw ConfigError(where + "duplicate key '" + std::string(key) + "'");
        }
        try {
            apply_setting(cfg, key, value);
        } catch (const ConfigError& err) {
            throw ConfigError(where + err.what());
        }
    }
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::vector<std::uint8_t> bytes;
    try {
        bytes = detail::read_file(path);
    } catch (const IoError& e) {
        throw ConfigError(e.what());
    }
    try {
        return parse_config(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

std::string serialize_config(const RunConfig& cfg) {
    std::ostringstream out;
    for (const auto& e : entries()) {
        out << e.name << " = " << e.get(cfg) << '\n';
    }
    return out.str();
}

}  // namespace uadct
