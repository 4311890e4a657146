#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace deshadow::nets {

/// o1: strided convolution; o2: transposed convolution; o3: nearest
/// upsample, zero pad, convolution.
enum class Operation { down, up, final_up };
enum class Activation { leaky_relu, relu, tanh };

struct LayerSpec {
    int index = 0; ///< position in the 16-layer reference table
    int64_t channels_in = 0;
    int64_t channels_out = 0;
    Operation op = Operation::down;
    bool normalize = false;
    Activation activation = Activation::leaky_relu;
    double dropout = 0.0;
    int skip_from = 0; ///< down-layer index concatenated onto the input, 0 for none
};

/// U-Net layer table for a generator. `depth` is the number of stride-2
/// downsampling layers; depth 8 is the full 16-layer reference table.
struct GeneratorSpec {
    int64_t input_channels = 3;
    int depth = 8;
    std::vector<LayerSpec> layers;

    static GeneratorSpec make(int64_t input_channels, int depth = 8);

    /// Input height and width must be multiples of this value.
    int64_t required_multiple() const { return int64_t{1} << depth; }
    std::string describe() const;
    uint64_t hash() const;
};

struct DiscriminatorSpec {
    int64_t input_channels = 6;
    std::vector<int64_t> widths{64, 128, 256, 512};
    int64_t kernel = 4;
    double negative_slope = 0.2;

    std::string describe() const;
    uint64_t hash() const;
};

uint64_t fnv1a(const std::string& text);

struct LayerTrace {
    int index;
    std::vector<int64_t> output_shape;
};

class GeneratorImpl : public torch::nn::Module {
public:
    GeneratorImpl(GeneratorSpec spec, uint64_t seed);

    /// x: [N, input_channels, H, W] in model space. Returns [N, 3, H, W] in (-1, 1).
    torch::Tensor forward(const torch::Tensor& x);
    /// Concatenates image and mask, for the shadow-insertion generator.
    torch::Tensor forward(const torch::Tensor& image, const torch::Tensor& mask);
    /// Forward pass that also records every layer's output shape.
    torch::Tensor forward_traced(const torch::Tensor& x, std::vector<LayerTrace>& trace);

    const GeneratorSpec& spec() const { return spec_; }

    /// Debug pass-through: forward returns the first three input channels.
    void set_identity(bool enabled) { identity_ = enabled; }
    bool identity() const { return identity_; }

    /// Generator driving dropout masks; part of the checkpointed state.
    at::Generator& dropout_generator() { return dropout_rng_; }

private:
    torch::Tensor run(const torch::Tensor& x, std::vector<LayerTrace>* trace);
    void check_input(const torch::Tensor& x) const;

    GeneratorSpec spec_;
    std::vector<torch::nn::Conv2d> convs_;
    std::vector<torch::nn::ConvTranspose2d> deconvs_;
    std::vector<torch::nn::InstanceNorm2d> norms_;
    bool identity_ = false;
    at::Generator dropout_rng_;
};
TORCH_MODULE(Generator);

class DiscriminatorImpl : public torch::nn::Module {
public:
    explicit DiscriminatorImpl(DiscriminatorSpec spec = {});

    /// pair: [N, 6, H, W] (candidate channels first). Returns [N, 1, H/16, W/16].
    torch::Tensor forward(const torch::Tensor& pair);
    torch::Tensor forward(const torch::Tensor& candidate, const torch::Tensor& reference);

    const DiscriminatorSpec& spec() const { return spec_; }

private:
    DiscriminatorSpec spec_;
    std::vector<torch::nn::Conv2d> convs_;
    std::vector<torch::nn::InstanceNorm2d> norms_;
    torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(Discriminator);

/// Builds a generator with `input_channels` 3 (shadow removal) or 4 (shadow
/// insertion, image plus mask) and Gaussian-initialized weights.
Generator build_generator(int64_t input_channels, at::Generator& rng, int depth = 8, double init_std = 0.02);
Discriminator build_discriminator(at::Generator& rng, double init_std = 0.02);

/// Convolution weights ~ N(mean, std^2), normalization scales ~ N(1, std^2),
/// biases zero.
void init_weights(torch::nn::Module& network, double mean, double std, at::Generator& rng);

int64_t parameter_count(const torch::nn::Module& network);

} // namespace deshadow::nets
