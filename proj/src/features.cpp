#include "deshadow/features.hpp"

#include <array>
#include <cmath>
#include <fstream>

#include <ATen/CPUGeneratorImpl.h>
#include <torch/script.h>

#include "deshadow/errors.hpp"

namespace fs = std::filesystem;

namespace deshadow::features {

void FeatureExtractor::check_input(const torch::Tensor& images) const {
    if (images.dim() != 4 || images.size(1) != 3)
        throw InvalidInput("feature extractor expects [N, 3, H, W] images");
    if (images.size(2) < minimum_size() || images.size(3) < minimum_size())
        throw InvalidInput(name() + " needs inputs of at least " + std::to_string(minimum_size()) + "x" +
                           std::to_string(minimum_size()));
}

namespace {

// VGG-16 trunk up to relu4_3: (out channels, tap after this conv).
constexpr std::array<std::pair<int64_t, bool>, 10> kVggConvs{{{64, false},
                                                              {64, true},
                                                              {128, false},
                                                              {128, true},
                                                              {256, false},
                                                              {256, false},
                                                              {256, true},
                                                              {512, false},
                                                              {512, false},
                                                              {512, true}}};
// Index of each conv inside torchvision's vgg16().features.
constexpr std::array<int, 10> kTorchvisionIndex{0, 2, 5, 7, 10, 12, 14, 17, 19, 21};

} // namespace

VggFeaturesImpl::VggFeaturesImpl(int64_t width_divisor) {
    if (width_divisor < 1)
        throw InvalidInput("width divisor must be >= 1");
    int64_t in = 3;
    for (size_t i = 0; i < kVggConvs.size(); ++i) {
        const int64_t out = std::max<int64_t>(1, kVggConvs[i].first / width_divisor);
        convs_.push_back(register_module("conv" + std::to_string(i),
                                         torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).padding(1))));
        in = out;
    }
}

std::vector<torch::Tensor> VggFeaturesImpl::forward(const torch::Tensor& normalized) {
    std::vector<torch::Tensor> taps;
    auto x = normalized;
    for (size_t i = 0; i < convs_.size(); ++i) {
        x = torch::relu(convs_[i](x));
        if (kVggConvs[i].second) {
            taps.push_back(x);
            if (taps.size() < 4)
                x = torch::max_pool2d(x, 2, 2);
        }
    }
    return taps;
}

VggExtractor::VggExtractor(int64_t width_divisor, uint64_t seed) : net_(width_divisor), width_divisor_(width_divisor) {
    auto rng = at::make_generator<at::CPUGeneratorImpl>(seed);
    torch::NoGradGuard no_grad;
    for (auto& conv : net_->convs()) {
        const auto fan_in = static_cast<double>(conv->weight.size(1) * conv->weight.size(2) * conv->weight.size(3));
        conv->weight.normal_(0.0, std::sqrt(2.0 / fan_in), rng);
        conv->bias.zero_();
    }
    freeze();
}

VggExtractor::VggExtractor(const fs::path& weights) : net_(1), width_divisor_(1), calibrated_(true) {
    std::ifstream in(weights, std::ios::binary);
    if (!in)
        throw ConfigError("feature weights file not found: " + weights.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    c10::IValue loaded;
    try {
        loaded = torch::pickle_load(bytes);
    } catch (const c10::Error& e) {
        throw ConfigError("cannot parse feature weights " + weights.string() + ": " + e.what_without_backtrace());
    }
    if (!loaded.isGenericDict())
        throw ConfigError("feature weights must be a state dict: " + weights.string());
    auto dict = loaded.toGenericDict();
    auto lookup = [&](const std::string& key) -> torch::Tensor {
        for (const auto& name : {"features." + key, key}) {
            auto it = dict.find(c10::IValue(name));
            if (it != dict.end())
                return it->value().toTensor();
        }
        throw ConfigError("feature weights missing entry '" + key + "' in " + weights.string());
    };
    torch::NoGradGuard no_grad;
    for (size_t i = 0; i < kTorchvisionIndex.size(); ++i) {
        auto& conv = net_->convs()[i];
        const auto prefix = std::to_string(kTorchvisionIndex[i]);
        auto w = lookup(prefix + ".weight");
        auto b = lookup(prefix + ".bias");
        if (w.sizes() != conv->weight.sizes() || b.sizes() != conv->bias.sizes())
            throw ConfigError("feature weights shape mismatch at conv " + prefix);
        conv->weight.copy_(w);
        conv->bias.copy_(b);
    }
    freeze();
}

void VggExtractor::freeze() {
    net_->eval();
    for (auto& p : net_->parameters())
        p.set_requires_grad(false);
    mean_ = torch::tensor({0.485, 0.456, 0.406}, torch::kFloat32).view({1, 3, 1, 1});
    std_ = torch::tensor({0.229, 0.224, 0.225}, torch::kFloat32).view({1, 3, 1, 1});
}

std::vector<torch::Tensor> VggExtractor::taps(const torch::Tensor& images) {
    check_input(images);
    auto unit = (images + 1.0) * 0.5;
    auto normalized = (unit - mean_.to(images.dtype())) / std_.to(images.dtype());
    if (images.scalar_type() != torch::kFloat32) {
        // Double-precision callers (gradient checks) get a matching copy.
        net_->to(images.scalar_type());
        auto out = net_->forward(normalized);
        net_->to(torch::kFloat32);
        return out;
    }
    return net_->forward(normalized);
}

std::vector<std::string> VggExtractor::tap_names() const { return {"relu1_2", "relu2_2", "relu3_3", "relu4_3"}; }

std::string VggExtractor::name() const {
    return "vgg16" + (width_divisor_ > 1 ? "/" + std::to_string(width_divisor_) : std::string{});
}

std::shared_ptr<FeatureExtractor> make_extractor(const std::string& kind, int64_t width_divisor, uint64_t seed,
                                                 const fs::path& weights) {
    if (kind == "identity")
        return std::make_shared<IdentityExtractor>();
    if (kind == "vgg16") {
        if (!weights.empty())
            return std::make_shared<VggExtractor>(weights);
        return std::make_shared<VggExtractor>(width_divisor, seed);
    }
    throw ConfigError("unknown feature extractor '" + kind + "' (expected vgg16|identity)");
}

} // namespace deshadow::features
