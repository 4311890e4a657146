#include "deshadow/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <sstream>

#include "deshadow/errors.hpp"

namespace deshadow::engine {

std::string to_string(Regime regime) { return regime == Regime::paired ? "paired" : "unpaired"; }

Regime parse_regime(const std::string& text) {
    if (text == "paired")
        return Regime::paired;
    if (text == "unpaired")
        return Regime::unpaired;
    throw ConfigError("regime must be paired or unpaired, got '" + text + "'");
}

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos)
        return {};
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

std::string fmt_double(double v) {
    char buf[64];
    const auto result = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, result.ptr);
}

double to_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        double d = std::stod(v, &pos);
        if (pos != v.size())
            throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' expects a number, got '" + v + "'");
    }
}

int64_t to_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        long long i = std::stoll(v, &pos);
        if (pos != v.size())
            throw std::invalid_argument(v);
        return i;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' expects an integer, got '" + v + "'");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true" || v == "yes" || v == "on")
        return true;
    if (v == "0" || v == "false" || v == "no" || v == "off")
        return false;
    throw ConfigError("config key '" + key + "' expects a boolean, got '" + v + "'");
}

std::string seed_name(MaskBankSeed s) {
    switch (s) {
    case MaskBankSeed::binarized: return "binarized";
    case MaskBankSeed::ground_truth: return "ground_truth";
    case MaskBankSeed::none: return "none";
    }
    return "binarized";
}

MaskBankSeed parse_seed(const std::string& v) {
    if (v == "binarized")
        return MaskBankSeed::binarized;
    if (v == "ground_truth")
        return MaskBankSeed::ground_truth;
    if (v == "none")
        return MaskBankSeed::none;
    throw ConfigError("mask_bank_seed must be binarized|ground_truth|none, got '" + v + "'");
}

struct Binding {
    ConfigKey key;
    std::function<void(TrainConfig&, const std::string&)> set;
    std::function<std::string(const TrainConfig&)> get;
};

#define DESHADOW_DOUBLE(name, field, help)                                                                    \
    Binding {                                                                                                 \
        {name, help}, [](TrainConfig& c, const std::string& v) { c.field = to_double(name, v); },            \
            [](const TrainConfig& c) { return fmt_double(c.field); }                                          \
    }
#define DESHADOW_INT(name, field, help)                                                                       \
    Binding {                                                                                                 \
        {name, help},                                                                                         \
            [](TrainConfig& c, const std::string& v) {                                                        \
                c.field = static_cast<decltype(c.field)>(to_int(name, v));                                    \
            },                                                                                                \
            [](const TrainConfig& c) { return std::to_string(c.field); }                                      \
    }
#define DESHADOW_BOOL(name, field, help)                                                                      \
    Binding {                                                                                                 \
        {name, help}, [](TrainConfig& c, const std::string& v) { c.field = to_bool(name, v); },              \
            [](const TrainConfig& c) { return std::string(c.field ? "true" : "false"); }                      \
    }
#define DESHADOW_STRING(name, field, help)                                                                    \
    Binding {                                                                                                 \
        {name, help}, [](TrainConfig& c, const std::string& v) { c.field = v; },                             \
            [](const TrainConfig& c) { return c.field; }                                                      \
    }

const std::vector<Binding>& bindings() {
    static const std::vector<Binding> table{
        Binding{{"regime", "paired | unpaired; selects the default loss-weight column"},
                [](TrainConfig& c, const std::string& v) { c.regime = parse_regime(v); },
                [](const TrainConfig& c) { return to_string(c.regime); }},
        DESHADOW_INT("epochs", epochs, "number of training epochs"),
        DESHADOW_DOUBLE("lr", lr, "initial learning rate"),
        DESHADOW_INT("decay_start_epoch", decay_start_epoch, "epoch after which the rate decays linearly to 0"),
        DESHADOW_DOUBLE("adam_beta1", adam_beta1, "Adam beta1"),
        DESHADOW_DOUBLE("adam_beta2", adam_beta2, "Adam beta2"),
        DESHADOW_INT("batch_size", batch_size, "images per step"),
        DESHADOW_INT("resolution", resolution, "square training resolution"),
        DESHADOW_INT("depth", depth, "generator downsampling depth (8 = full layer table)"),
        DESHADOW_INT("seed", seed, "master seed for every random stream"),
        DESHADOW_DOUBLE("init_std", init_std, "std of the Gaussian weight initialization"),
        DESHADOW_DOUBLE("gamma1", weights.gamma1, "adversarial weight"),
        DESHADOW_DOUBLE("gamma2", weights.gamma2, "content weight"),
        DESHADOW_DOUBLE("gamma3", weights.gamma3, "pixel cycle weight"),
        DESHADOW_DOUBLE("gamma4", weights.gamma4, "perceptual cycle weight"),
        DESHADOW_DOUBLE("gamma5", weights.gamma5, "mask loss weight"),
        DESHADOW_DOUBLE("beta1", weights.beta1, "paired forward pixel weight"),
        DESHADOW_DOUBLE("beta2", weights.beta2, "forward mask weight"),
        DESHADOW_DOUBLE("alpha1", weights.alpha1, "color weight inside the perceptual ensemble"),
        DESHADOW_DOUBLE("alpha2", weights.alpha2, "content weight inside the perceptual ensemble"),
        DESHADOW_DOUBLE("alpha3", weights.alpha3, "style weight inside the perceptual ensemble"),
        DESHADOW_DOUBLE("color_sigma", loss_options.color_sigma, "Gaussian sigma of the color loss"),
        DESHADOW_BOOL("gram_normalize", loss_options.gram_normalize, "normalize Gram matrices by size"),
        DESHADOW_BOOL("beta2_inside_gamma5", loss_options.beta2_inside_gamma5,
                      "scale the beta2 mask term by gamma5"),
        DESHADOW_BOOL("literal_reconstruction", literal_reconstruction,
                      "reconstruct u from G_f(u_hat) instead of G_f(v_hat)"),
        DESHADOW_DOUBLE("mask_temperature", mask_temperature, "temperature of the soft mask relaxation"),
        DESHADOW_INT("replay_capacity", replay_capacity, "replay buffer capacity"),
        DESHADOW_DOUBLE("replay_swap_probability", replay_swap_probability, "replay buffer swap probability"),
        DESHADOW_INT("mask_bank_capacity", mask_bank_capacity, "mask bank capacity"),
        Binding{{"mask_bank_seed", "binarized | ground_truth | none; initial mask bank content"},
                [](TrainConfig& c, const std::string& v) { c.mask_bank_seed = parse_seed(v); },
                [](const TrainConfig& c) { return seed_name(c.mask_bank_seed); }},
        DESHADOW_STRING("mask_method", mask_method, "median | otsu threshold for dataset masks"),
        DESHADOW_INT("mask_dilation", mask_dilation, "dilation radius applied to dataset masks"),
        DESHADOW_STRING("dataset_root", dataset_root, "dataset directory"),
        DESHADOW_STRING("layout", layout, "istd | usr | flat"),
        DESHADOW_STRING("split", split, "train | test"),
        DESHADOW_STRING("feature_extractor", feature_extractor, "vgg16 | identity"),
        DESHADOW_INT("fx_width_divisor", fx_width_divisor, "channel divisor of the VGG trunk"),
        DESHADOW_STRING("fx_weights", fx_weights, "state dict with pretrained VGG-16 weights"),
        DESHADOW_INT("max_steps", max_steps, "stop after this many steps (0 = no limit)"),
        DESHADOW_INT("log_every", log_every, "steps between log rows"),
        DESHADOW_INT("checkpoint_every", checkpoint_every, "epochs between checkpoints"),
        DESHADOW_BOOL("debug_identity", debug_identity, "pass-through generators (debugging only)"),
        DESHADOW_STRING("tag", tag, "run directory suffix"),
    };
    return table;
}

#undef DESHADOW_DOUBLE
#undef DESHADOW_INT
#undef DESHADOW_BOOL
#undef DESHADOW_STRING

std::string valid_keys() {
    std::string out;
    for (const auto& b : bindings())
        out += (out.empty() ? "" : ", ") + b.key.name;
    return out;
}

} // namespace

const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = [] {
        std::vector<ConfigKey> k;
        for (const auto& b : bindings())
            k.push_back(b.key);
        return k;
    }();
    return keys;
}

bool is_config_key(const std::string& key) {
    for (const auto& b : bindings())
        if (b.key.name == key)
            return true;
    return false;
}

std::map<std::string, std::string> parse_config_text(const std::string& text) {
    std::map<std::string, std::string> values;
    std::istringstream in(text);
    std::string line;
    int number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (auto hash = line.find('#'); hash != std::string::npos)
            line.erase(hash);
        line = trim(line);
        if (line.empty())
            continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(number) + ": expected 'key = value'");
        const auto key = trim(line.substr(0, eq));
        if (!is_config_key(key))
            throw ConfigError("unknown config key '" + key + "'; valid keys: " + valid_keys());
        values[key] = trim(line.substr(eq + 1));
    }
    return values;
}

std::map<std::string, std::string> read_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot read config file: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

TrainConfig build_config(const std::map<std::string, std::string>& values) {
    TrainConfig config;
    if (auto it = values.find("regime"); it != values.end()) {
        config.regime = parse_regime(it->second);
        const auto defaults = config.regime == Regime::paired ? losses::LossWeights::paired()
                                                               : losses::LossWeights::unpaired();
        config.weights = defaults;
    }
    for (const auto& b : bindings()) {
        if (b.key.name == "regime")
            continue;
        if (auto it = values.find(b.key.name); it != values.end())
            b.set(config, it->second);
    }
    for (const auto& [key, _] : values)
        if (!is_config_key(key))
            throw ConfigError("unknown config key '" + key + "'; valid keys: " + valid_keys());
    config.validate();
    return config;
}

std::string config_to_text(const TrainConfig& config) {
    std::ostringstream os;
    for (const auto& b : bindings())
        os << b.key.name << " = " << b.get(config) << '\n';
    return os.str();
}

void TrainConfig::validate() const {
    if (epochs <= 0)
        throw ConfigError("epochs must be positive");
    if (!(lr > 0.0))
        throw ConfigError("lr must be positive");
    if (decay_start_epoch < 0 || decay_start_epoch >= epochs)
        throw ConfigError("decay_start_epoch must lie in [0, epochs)");
    if (batch_size < 1)
        throw ConfigError("batch_size must be >= 1");
    if (depth < 2 || depth > 8)
        throw ConfigError("depth must be in [2, 8]");
    if (resolution < 1 || resolution % (1 << depth) != 0)
        throw ConfigError("resolution must be a positive multiple of " + std::to_string(1 << depth));
    if (replay_capacity < 1 || mask_bank_capacity < 1)
        throw ConfigError("buffer capacities must be positive");
    if (replay_swap_probability < 0.0 || replay_swap_probability > 1.0)
        throw ConfigError("replay_swap_probability must be in [0, 1]");
    if (!(mask_temperature > 0.0))
        throw ConfigError("mask_temperature must be positive");
    for (double w : {weights.gamma1, weights.gamma2, weights.gamma3, weights.gamma4, weights.gamma5, weights.beta1,
                     weights.beta2, weights.alpha1, weights.alpha2, weights.alpha3})
        if (w < 0.0)
            throw ConfigError("loss weights must be non-negative");
    if (!(loss_options.color_sigma > 0.0))
        throw ConfigError("color_sigma must be positive");
    if (fx_width_divisor < 1)
        throw ConfigError("fx_width_divisor must be >= 1");
    if (mask_method != "median" && mask_method != "otsu")
        throw ConfigError("mask_method must be median or otsu");
}

} // namespace deshadow::engine
