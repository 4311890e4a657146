#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace deshadow::features {

/// Frozen feature network exposing an ordered list of taps. Inputs are
/// [N, 3, H, W] model-space images; each tap is an [N, D, h, w] block.
class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;

    virtual std::vector<torch::Tensor> taps(const torch::Tensor& images) = 0;
    virtual std::vector<std::string> tap_names() const = 0;
    virtual int64_t minimum_size() const = 0;
    virtual std::string name() const = 0;
    /// False when running on random (seeded) weights instead of trained ones.
    virtual bool calibrated() const = 0;

    size_t tap_count() const { return tap_names().size(); }
    void check_input(const torch::Tensor& images) const;
};

/// Single tap that returns its input unchanged.
class IdentityExtractor final : public FeatureExtractor {
public:
    std::vector<torch::Tensor> taps(const torch::Tensor& images) override { return {images}; }
    std::vector<std::string> tap_names() const override { return {"input"}; }
    int64_t minimum_size() const override { return 1; }
    std::string name() const override { return "identity"; }
    bool calibrated() const override { return true; }
};

class VggFeaturesImpl : public torch::nn::Module {
public:
    explicit VggFeaturesImpl(int64_t width_divisor = 1);
    /// Activations after relu1_2, relu2_2, relu3_3 and relu4_3.
    std::vector<torch::Tensor> forward(const torch::Tensor& normalized);
    std::vector<torch::nn::Conv2d>& convs() { return convs_; }

private:
    std::vector<torch::nn::Conv2d> convs_;
};
TORCH_MODULE(VggFeatures);

/// VGG-16 convolutional trunk, four taps. Without a weights file the
/// network is randomly initialized (He-normal, fixed seed) and reports
/// itself as uncalibrated.
class VggExtractor final : public FeatureExtractor {
public:
    VggExtractor(int64_t width_divisor, uint64_t seed);
    /// Loads a torchvision-style `features.*` state dict saved with torch.save.
    VggExtractor(const std::filesystem::path& weights);

    std::vector<torch::Tensor> taps(const torch::Tensor& images) override;
    std::vector<std::string> tap_names() const override;
    int64_t minimum_size() const override { return 32; }
    std::string name() const override;
    bool calibrated() const override { return calibrated_; }

private:
    void freeze();

    VggFeatures net_;
    int64_t width_divisor_ = 1;
    bool calibrated_ = false;
    torch::Tensor mean_, std_;
};

/// "identity" or "vgg16"; `weights` may be empty for an uncalibrated network.
std::shared_ptr<FeatureExtractor> make_extractor(const std::string& kind, int64_t width_divisor, uint64_t seed,
                                                 const std::filesystem::path& weights = {});

} // namespace deshadow::features
