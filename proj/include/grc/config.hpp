#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "grc/net.hpp"

namespace grc {

struct DataConfig {
    std::uint64_t seed = 7;
    int train_samples = 512;
    int val_samples = 128;
    int height = 64;
    int width = 64;
    bool augment = true;
    std::string dir;  // persisted dataset; generated from seed when empty or missing
    bool operator==(const DataConfig&) const = default;
};

struct BenchConfig {
    int channels = 256;
    int out_channels = 32;  // keeps the naive reference path affordable
    int height = 64;
    int width = 64;
    int kernel = 3;
    int g = 4;
    int repetitions = 20;
    int warmup = 3;
    int threads = 1;
    std::uint64_t seed = 1;
    bool operator==(const BenchConfig&) const = default;
};

/// Everything a subcommand needs. Serialised as flat JSON whose keys are
/// "section.field", e.g. {"train.base_lr": 0.01, "grc.g_h": 2}.
struct ExperimentConfig {
    NetworkSpec network = toy_fcn_spec(true);
    bool grc_enabled = true;
    TrainConfig train;
    int eval_every = 100;
    DataConfig data;
    BenchConfig bench;

    /// network with grc_stages cleared when GRC is disabled.
    NetworkSpec network_spec() const;
    bool operator==(const ExperimentConfig&) const = default;
};

/// Thrown for malformed or inconsistent configuration; what() names the field.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Keys accepted in config files and as --key flags.
std::vector<std::string> config_keys();

ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::string& path);

/// Sets one key; `value` is JSON text, or a bare string for string fields.
void apply_override(ExperimentConfig& cfg, const std::string& key, const std::string& value);

/// Throws ConfigError unless the network and training settings are consistent.
void validate(const ExperimentConfig& cfg);

std::string to_json(const ExperimentConfig& cfg);

}  // namespace grc
