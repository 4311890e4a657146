#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "deshadow/losses.hpp"

namespace deshadow::engine {

enum class Regime { paired, unpaired };
enum class MaskBankSeed { binarized, ground_truth, none };

/// Every knob of a training run. Mirrors the flat `key = value` config file.
struct TrainConfig {
    Regime regime = Regime::unpaired;
    int epochs = 100;
    double lr = 0.005;
    int decay_start_epoch = 40;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    int batch_size = 1;
    int resolution = 256;
    int depth = 8;
    uint64_t seed = 0;
    double init_std = 0.02;

    losses::LossWeights weights = losses::LossWeights::unpaired();
    losses::LossOptions loss_options;

    bool literal_reconstruction = false;
    double mask_temperature = 0.02;

    int replay_capacity = 50;
    double replay_swap_probability = 0.5;
    int mask_bank_capacity = 64;
    MaskBankSeed mask_bank_seed = MaskBankSeed::binarized;
    std::string mask_method = "median";
    int mask_dilation = 0;

    std::string dataset_root;
    std::string layout = "istd";
    std::string split = "train";

    std::string feature_extractor = "vgg16";
    int fx_width_divisor = 1;
    std::string fx_weights;

    int64_t max_steps = 0; ///< 0 means run all epochs
    int log_every = 1;
    int checkpoint_every = 1;
    bool debug_identity = false;
    std::string tag = "run";

    /// Throws ConfigError when the fields are inconsistent.
    void validate() const;
};

std::string to_string(Regime regime);
Regime parse_regime(const std::string& text);

struct ConfigKey {
    std::string name;
    std::string help;
};

/// Every recognized key, in file order.
const std::vector<ConfigKey>& config_keys();
bool is_config_key(const std::string& key);

/// Parses `key = value` lines; `#` starts a comment. Unknown keys raise a
/// ConfigError listing the valid ones.
std::map<std::string, std::string> parse_config_text(const std::string& text);
std::map<std::string, std::string> read_config_file(const std::filesystem::path& path);

/// Builds a config from key/value pairs. `regime` is applied first so that
/// loss weights default to that regime's column before explicit overrides.
TrainConfig build_config(const std::map<std::string, std::string>& values);

/// Canonical text form (round-trips through parse_config_text/build_config).
std::string config_to_text(const TrainConfig& config);

} // namespace deshadow::engine
