#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "uadct/data.hpp"
#include "uadct/trainer.hpp"

namespace uadct {

/// Everything a command-line run needs: data generation, split and training settings.
struct RunConfig {
    /// n_images is the number of training images.
    SyntheticSpec data;
    int n_test = 50;
    SplitSpec split;
    TrainConfig train;

    void validate() const;
};

struct ConfigKey {
    std::string name;
    std::string default_value;
    std::string description;
};

/// Every accepted key with its default, in file order.
std::vector<ConfigKey> config_keys();

/// Parses `key = value` lines. '#' starts a comment; blank lines are ignored.
/// Unknown keys, duplicate keys and malformed values raise ConfigError naming the line.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);

/// One line per key with the effective value; parse_config reads it back unchanged.
std::string serialize_config(const RunConfig& cfg);

/// Sets one key as if it appeared in a config file.
void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value);

}  // namespace uadct
