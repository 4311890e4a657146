#include "deshadow/nets.hpp"

#include <array>
#include <sstream>

#include <ATen/CPUGeneratorImpl.h>

#include "deshadow/errors.hpp"

namespace deshadow::nets {

namespace {

// Reference table, indexed by layer number - 1.
constexpr std::array<int64_t, 8> kDownWidths{64, 128, 256, 512, 512, 512, 512, 512};
constexpr std::array<bool, 16> kNormalize{false, true, true, true, true, true, true, false,
                                          true,  true, true, true, true, true, true, false};

double table_dropout(int index) { return (index >= 4 && index <= 12) ? 0.5 : 0.0; }

const char* op_name(Operation op) {
    switch (op) {
    case Operation::down: return "o1";
    case Operation::up: return "o2";
    case Operation::final_up: return "o3";
    }
    return "?";
}

const char* activation_name(Activation a) {
    switch (a) {
    case Activation::leaky_relu: return "LR";
    case Activation::relu: return "R";
    case Activation::tanh: return "TH";
    }
    return "?";
}

} // namespace

uint64_t fnv1a(const std::string& text) {
    uint64_t h = 14695981039346656037ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

GeneratorSpec GeneratorSpec::make(int64_t input_channels, int depth) {
    if (input_channels != 3 && input_channels != 4)
        throw InvalidInput("generator input_channels must be 3 or 4");
    if (depth < 2 || depth > 8)
        throw InvalidInput("generator depth must be in [2, 8]");

    GeneratorSpec spec;
    spec.input_channels = input_channels;
    spec.depth = depth;

    // Down path: reference layers 1..depth-1, then the bottleneck (layer 8).
    std::vector<int> down_indices;
    for (int i = 1; i < depth; ++i)
        down_indices.push_back(i);
    down_indices.push_back(8);

    std::vector<LayerSpec> down;
    int64_t in = input_channels;
    for (int index : down_indices) {
        LayerSpec l;
        l.index = index;
        l.channels_in = in;
        l.channels_out = kDownWidths[index - 1];
        l.op = Operation::down;
        l.normalize = kNormalize[index - 1];
        l.activation = Activation::leaky_relu;
        l.dropout = table_dropout(index);
        down.push_back(l);
        in = l.channels_out;
    }

    // Up path mirrors the down path: the layer paired with down layer k emits
    // k's input width; interior layers concatenate k's output onto their input.
    std::vector<LayerSpec> up;
    for (auto it = down.rbegin(); it != down.rend(); ++it) {
        const LayerSpec& mirror = *it;
        LayerSpec l;
        l.index = 17 - mirror.index;
        l.normalize = kNormalize[l.index - 1];
        l.dropout = table_dropout(l.index);
        if (mirror.index == 8) {
            l.channels_in = mirror.channels_out;
            l.channels_out = mirror.channels_in;
            l.op = Operation::up;
            l.activation = Activation::relu;
        } else if (mirror.index == 1) {
            l.channels_in = up.back().channels_out;
            l.channels_out = 3;
            l.op = Operation::final_up;
            l.activation = Activation::tanh;
        } else {
            l.channels_in = up.back().channels_out + mirror.channels_out;
            l.channels_out = mirror.channels_in;
            l.op = Operation::up;
            l.activation = Activation::relu;
            l.skip_from = mirror.index;
        }
        up.push_back(l);
    }

    spec.layers = down;
    spec.layers.insert(spec.layers.end(), up.begin(), up.end());
    return spec;
}

std::string GeneratorSpec::describe() const {
    std::ostringstream os;
    os << "generator in=" << input_channels << " depth=" << depth;
    for (const auto& l : layers) {
        os << " | L" << l.index << ' ' << l.channels_in << "->" << l.channels_out << ' ' << op_name(l.op)
           << " n" << l.normalize << ' ' << activation_name(l.activation) << " d" << l.dropout;
        if (l.skip_from)
            os << " skip" << l.skip_from;
    }
    return os.str();
}

uint64_t GeneratorSpec::hash() const { return fnv1a(describe()); }

std::string DiscriminatorSpec::describe() const {
    std::ostringstream os;
    os << "discriminator in=" << input_channels << " k=" << kernel << " slope=" << negative_slope << " widths";
    for (auto w : widths)
        os << ' ' << w;
    return os.str();
}

uint64_t DiscriminatorSpec::hash() const { return fnv1a(describe()); }

// ---------------------------------------------------------------------------

GeneratorImpl::GeneratorImpl(GeneratorSpec spec, uint64_t seed)
    : spec_(std::move(spec)), dropout_rng_(at::make_generator<at::CPUGeneratorImpl>(seed)) {
    namespace nn = torch::nn;
    for (const auto& l : spec_.layers) {
        const auto name = "layer" + std::to_string(l.index);
        switch (l.op) {
        case Operation::down:
            convs_.push_back(register_module(
                name, nn::Conv2d(nn::Conv2dOptions(l.channels_in, l.channels_out, 4).stride(2).padding(1))));
            deconvs_.emplace_back(nullptr);
            break;
        case Operation::up:
            deconvs_.push_back(register_module(
                name,
                nn::ConvTranspose2d(nn::ConvTranspose2dOptions(l.channels_in, l.channels_out, 4).stride(2).padding(1))));
            convs_.emplace_back(nullptr);
            break;
        case Operation::final_up:
            convs_.push_back(
                register_module(name, nn::Conv2d(nn::Conv2dOptions(l.channels_in, l.channels_out, 4).padding(1))));
            deconvs_.emplace_back(nullptr);
            break;
        }
        if (l.normalize)
            norms_.push_back(register_module(
                name + "_norm", nn::InstanceNorm2d(nn::InstanceNorm2dOptions(l.channels_out).affine(true))));
        else
            norms_.emplace_back(nullptr);
    }
}

void GeneratorImpl::check_input(const torch::Tensor& x) const {
    if (x.dim() != 4)
        throw InvalidInput("generator expects a [N, C, H, W] tensor");
    if (x.size(1) != spec_.input_channels)
        throw InvalidInput("generator expects " + std::to_string(spec_.input_channels) + " input channels, got " +
                           std::to_string(x.size(1)));
    const auto multiple = spec_.required_multiple();
    if (x.size(2) % multiple != 0 || x.size(3) % multiple != 0 || x.size(2) == 0 || x.size(3) == 0)
        throw InvalidInput("generator input size " + std::to_string(x.size(2)) + "x" + std::to_string(x.size(3)) +
                           " must be a multiple of " + std::to_string(multiple) + " (depth " +
                           std::to_string(spec_.depth) + ")");
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& x) { return run(x, nullptr); }

torch::Tensor GeneratorImpl::forward(const torch::Tensor& image, const torch::Tensor& mask) {
    return run(torch::cat({image, mask.to(image.dtype())}, 1), nullptr);
}

torch::Tensor GeneratorImpl::forward_traced(const torch::Tensor& x, std::vector<LayerTrace>& trace) {
    trace.clear();
    return run(x, &trace);
}

torch::Tensor GeneratorImpl::run(const torch::Tensor& input, std::vector<LayerTrace>* trace) {
    check_input(input);
    if (identity_)
        return input.slice(1, 0, 3);

    namespace F = torch::nn::functional;
    std::vector<torch::Tensor> skips(9);
    torch::Tensor x = input;
    for (size_t i = 0; i < spec_.layers.size(); ++i) {
        const auto& l = spec_.layers[i];
        if (l.skip_from)
            x = torch::cat({x, skips[l.skip_from]}, 1);
        switch (l.op) {
        case Operation::down: x = convs_[i](x); break;
        case Operation::up: x = deconvs_[i](x); break;
        case Operation::final_up:
            x = F::interpolate(x, F::InterpolateFuncOptions()
                                      .scale_factor(std::vector<double>{2.0, 2.0})
                                      .mode(torch::kNearest));
            x = F::pad(x, F::PadFuncOptions({1, 0, 1, 0}));
            x = convs_[i](x);
            break;
        }
        if (l.normalize)
            x = norms_[i](x);
        switch (l.activation) {
        case Activation::leaky_relu: x = F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(0.2)); break;
        case Activation::relu: x = torch::relu(x); break;
        case Activation::tanh: x = torch::tanh(x); break;
        }
        if (l.dropout > 0.0 && is_training()) {
            auto keep = torch::empty_like(x).bernoulli_(1.0 - l.dropout, dropout_rng_);
            x = x * keep / (1.0 - l.dropout);
        }
        if (l.op == Operation::down)
            skips[l.index] = x;
        if (trace)
            trace->push_back({l.index, x.sizes().vec()});
    }
    return x;
}

// ---------------------------------------------------------------------------

DiscriminatorImpl::DiscriminatorImpl(DiscriminatorSpec spec) : spec_(std::move(spec)) {
    namespace nn = torch::nn;
    if (spec_.widths.size() != 4)
        throw InvalidInput("discriminator needs exactly four convolutional blocks");
    int64_t in = spec_.input_channels;
    for (size_t i = 0; i < spec_.widths.size(); ++i) {
        const auto name = "block" + std::to_string(i + 1);
        const auto out = spec_.widths[i];
        convs_.push_back(
            register_module(name, nn::Conv2d(nn::Conv2dOptions(in, out, spec_.kernel).stride(2).padding(1))));
        if (i == 0)
            norms_.emplace_back(nullptr);
        else
            norms_.push_back(
                register_module(name + "_norm", nn::InstanceNorm2d(nn::InstanceNorm2dOptions(out).affine(true))));
        in = out;
    }
    head_ = register_module("head", nn::Conv2d(nn::Conv2dOptions(in, 1, spec_.kernel).padding(1)));
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& pair) {
    namespace F = torch::nn::functional;
    if (pair.dim() != 4 || pair.size(1) != spec_.input_channels)
        throw InvalidInput("discriminator expects [N, " + std::to_string(spec_.input_channels) + ", H, W] input");
    if (pair.size(2) < 16 || pair.size(3) < 16)
        throw InvalidInput("discriminator input must be at least 16x16");
    auto x = pair;
    for (size_t i = 0; i < convs_.size(); ++i) {
        x = convs_[i](x);
        if (norms_[i])
            x = norms_[i](x);
        x = F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(spec_.negative_slope));
    }
    x = F::pad(x, F::PadFuncOptions({1, 0, 1, 0}));
    return head_(x);
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& candidate, const torch::Tensor& reference) {
    return forward(torch::cat({candidate, reference}, 1));
}

// ---------------------------------------------------------------------------

void init_weights(torch::nn::Module& network, double mean, double std, at::Generator& rng) {
    torch::NoGradGuard no_grad;
    for (auto& module : network.modules(/*include_self=*/true)) {
        const bool is_norm = dynamic_cast<torch::nn::InstanceNorm2dImpl*>(module.get()) != nullptr;
        for (auto& item : module->named_parameters(/*recurse=*/false)) {
            auto& p = item.value();
            if (item.key() == "bias")
                p.zero_();
            else if (is_norm)
                p.normal_(1.0, std, rng);
            else
                p.normal_(mean, std, rng);
        }
    }
}

Generator build_generator(int64_t input_channels, at::Generator& rng, int depth, double init_std) {
    // Dropout gets its own stream, seeded from the construction stream.
    const auto seed = static_cast<uint64_t>(torch::randint(0, int64_t{1} << 62, {1}, rng, torch::kInt64).item<int64_t>());
    Generator g(GeneratorSpec::make(input_channels, depth), seed);
    init_weights(*g, 0.0, init_std, rng);
    return g;
}

Discriminator build_discriminator(at::Generator& rng, double init_std) {
    Discriminator d{DiscriminatorSpec{}};
    init_weights(*d, 0.0, init_std, rng);
    return d;
}

int64_t parameter_count(const torch::nn::Module& network) {
    int64_t n = 0;
    for (const auto& p : network.parameters())
        n += p.numel();
    return n;
}

} // namespace deshadow::nets
