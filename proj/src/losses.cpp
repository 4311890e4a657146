#include "deshadow/losses.hpp"

#include <cmath>

#include "deshadow/errors.hpp"

namespace deshadow::losses {

LossWeights LossWeights::unpaired() { return {250, 10, 100, 30, 60, 0, 100, 1, 0.1, 10000}; }
LossWeights LossWeights::paired() { return {250, 20, 60, 50, 60, 10, 100, 1, 0.1, 10000}; }

namespace {

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
    if (!a.defined() || !b.defined())
        throw InvalidInput(std::string(what) + ": undefined input");
    if (a.sizes() != b.sizes())
        throw InvalidInput(std::string(what) + ": shape mismatch");
}

torch::Tensor batched(const torch::Tensor& t) { return t.dim() == 3 ? t.unsqueeze(0) : t; }

// Mirror (reflect-101) index map for positions [-radius, n - 1 + radius].
torch::Tensor mirror_indices(int64_t n, int64_t radius) {
    std::vector<int64_t> idx;
    idx.reserve(n + 2 * radius);
    for (int64_t i = -radius; i < n + radius; ++i) {
        if (n == 1) {
            idx.push_back(0);
            continue;
        }
        const int64_t period = 2 * (n - 1);
        int64_t j = ((i % period) + period) % period;
        idx.push_back(j < n ? j : period - j);
    }
    return torch::tensor(idx, torch::kInt64);
}

torch::Tensor mse(const torch::Tensor& a, const torch::Tensor& b) { return (a - b).pow(2).mean(); }

torch::Tensor content_from_taps(const std::vector<torch::Tensor>& ta, const std::vector<torch::Tensor>& tb) {
    auto sum = torch::zeros({}, ta.front().options());
    for (size_t i = 0; i < ta.size(); ++i)
        sum = sum + mse(ta[i], tb[i]);
    return sum / static_cast<double>(ta.size());
}

torch::Tensor style_from_taps(const std::vector<torch::Tensor>& ta, const std::vector<torch::Tensor>& tb,
                              bool normalize) {
    auto sum = torch::zeros({}, ta.front().options());
    for (size_t i = 0; i < ta.size(); ++i)
        sum = sum + mse(gram_matrix(ta[i], normalize), gram_matrix(tb[i], normalize));
    return sum / static_cast<double>(ta.size());
}

} // namespace

torch::Tensor pixel_loss(const torch::Tensor& a, const torch::Tensor& b) {
    require_same_shape(a, b, "pixel_loss");
    return (a - b).abs().mean();
}

torch::Tensor gaussian_blur(const torch::Tensor& images, double sigma) {
    if (!(sigma > 0.0))
        throw InvalidInput("gaussian_blur: sigma must be positive");
    auto x = batched(images);
    const int64_t radius = static_cast<int64_t>(std::ceil(3.0 * sigma));
    const int64_t channels = x.size(1);

    auto offsets = torch::arange(-radius, radius + 1, torch::TensorOptions().dtype(x.dtype()));
    auto kernel = torch::exp(-offsets.pow(2) / (2.0 * sigma * sigma));
    kernel = kernel / kernel.sum();
    auto kernel_w = kernel.view({1, 1, 1, -1}).expand({channels, 1, 1, 2 * radius + 1}).contiguous();
    auto kernel_h = kernel.view({1, 1, -1, 1}).expand({channels, 1, 2 * radius + 1, 1}).contiguous();

    const std::vector<int64_t> stride1{1, 1}, pad0{0, 0};
    auto padded_w = x.index_select(3, mirror_indices(x.size(3), radius));
    auto blurred = torch::conv2d(padded_w, kernel_w, torch::Tensor(), stride1, pad0, stride1, channels);
    auto padded_h = blurred.index_select(2, mirror_indices(x.size(2), radius));
    blurred = torch::conv2d(padded_h, kernel_h, torch::Tensor(), stride1, pad0, stride1, channels);
    return images.dim() == 3 ? blurred.squeeze(0) : blurred;
}

torch::Tensor color_loss(const torch::Tensor& a, const torch::Tensor& b, double sigma) {
    require_same_shape(a, b, "color_loss");
    return mse(gaussian_blur(a, sigma), gaussian_blur(b, sigma));
}

torch::Tensor content_loss(const torch::Tensor& a, const torch::Tensor& b, FeatureExtractor& fx) {
    require_same_shape(a, b, "content_loss");
    return content_from_taps(fx.taps(batched(a)), fx.taps(batched(b)));
}

torch::Tensor gram_matrix(const torch::Tensor& features, bool normalize) {
    if (features.dim() != 4)
        throw InvalidInput("gram_matrix expects [N, D, h, w] features");
    const auto n = features.size(0), d = features.size(1);
    const auto positions = features.size(2) * features.size(3);
    auto f = features.reshape({n, d, positions});
    auto gram = torch::bmm(f, f.transpose(1, 2));
    if (normalize)
        gram = gram / static_cast<double>(positions * d);
    return gram;
}

torch::Tensor style_loss(const torch::Tensor& a, const torch::Tensor& b, FeatureExtractor& fx, bool normalize) {
    require_same_shape(a, b, "style_loss");
    return style_from_taps(fx.taps(batched(a)), fx.taps(batched(b)), normalize);
}

torch::Tensor perceptual_loss(const torch::Tensor& a, const torch::Tensor& b, FeatureExtractor& fx,
                              const LossWeights& weights, const LossOptions& options) {
    require_same_shape(a, b, "perceptual_loss");
    auto total = torch::zeros({}, a.options());
    if (weights.alpha1 != 0.0)
        total = total + weights.alpha1 * color_loss(a, b, options.color_sigma);
    if (weights.alpha2 != 0.0 || weights.alpha3 != 0.0) {
        const auto ta = fx.taps(batched(a));
        const auto tb = fx.taps(batched(b));
        if (weights.alpha2 != 0.0)
            total = total + weights.alpha2 * content_from_taps(ta, tb);
        if (weights.alpha3 != 0.0)
            total = total + weights.alpha3 * style_from_taps(ta, tb, options.gram_normalize);
    }
    return total;
}

torch::Tensor gan_loss_generator(const PatchCritic& critic, const torch::Tensor& fake, const torch::Tensor& reference,
                                 const torch::Tensor& negative) {
    require_same_shape(fake, reference, "gan_loss_generator");
    require_same_shape(negative, reference, "gan_loss_generator");
    auto positive = critic(torch::cat({batched(fake), batched(reference)}, 1));
    auto rejected = critic(torch::cat({batched(negative), batched(reference)}, 1));
    return 0.5 * (mse(positive, torch::ones_like(positive)) + mse(rejected, torch::zeros_like(rejected)));
}

torch::Tensor gan_loss_discriminator(const PatchCritic& critic, const torch::Tensor& real,
                                     const torch::Tensor& reference, const torch::Tensor& fake_from_buffer) {
    require_same_shape(real, reference, "gan_loss_discriminator");
    require_same_shape(fake_from_buffer, reference, "gan_loss_discriminator");
    auto accepted = critic(torch::cat({batched(real), batched(reference)}, 1));
    auto rejected = critic(torch::cat({batched(fake_from_buffer), batched(reference)}, 1));
    return 0.5 * (mse(accepted, torch::ones_like(accepted)) + mse(rejected, torch::zeros_like(rejected)));
}

torch::Tensor mask_loss(const torch::Tensor& m1, const torch::Tensor& m2) {
    require_same_shape(m1, m2, "mask_loss");
    return (m1 - m2).abs().mean();
}

// ---------------------------------------------------------------------------

const LossTerm& LossBreakdown::term(const std::string& name) const {
    for (const auto& t : terms)
        if (t.name == name)
            return t;
    throw InvalidInput("no loss term named '" + name + "'");
}

double LossBreakdown::weighted(const std::string& name) const {
    const auto& t = term(name);
    return t.coefficient * t.value.item<double>();
}

std::map<std::string, double> LossBreakdown::values() const {
    std::map<std::string, double> out;
    for (const auto& t : terms)
        out[t.name] = t.value.item<double>();
    return out;
}

namespace {

class TermCollector {
public:
    explicit TermCollector(const torch::TensorOptions& options) : options_(options) {}

    template <typename Fn>
    void add(const std::string& name, double coefficient, Fn&& compute) {
        torch::Tensor value = coefficient != 0.0 ? compute() : torch::zeros({}, options_);
        breakdown_.terms.push_back({name, value, coefficient});
    }

    LossBreakdown finish() {
        auto total = torch::zeros({}, options_);
        for (const auto& t : breakdown_.terms)
            if (t.coefficient != 0.0)
                total = total + t.coefficient * t.value;
        breakdown_.total = total;
        return std::move(breakdown_);
    }

private:
    torch::TensorOptions options_;
    LossBreakdown breakdown_;
};

LossBreakdown total_loss(const engine::CycleState& s, const AdversarialInputs& adv, const LossWeights& w,
                         FeatureExtractor& fx, const LossOptions& opt, bool paired) {
    s.require_complete();
    if (paired && !s.paired)
        throw ContractViolation("total_loss_paired requires a paired state with a ground-truth mask");
    if (w.gamma1 != 0.0) {
        if (!adv.d_f || !adv.d_s)
            throw ContractViolation("adversarial terms need both discriminators");
        if (!adv.negative_f.defined())
            throw ContractViolation("missing field: negative_f");
        if (!adv.negative_s.defined())
            throw ContractViolation("missing field: negative_s");
    }

    TermCollector c(s.u.options());
    c.add("gan_f_forward", w.gamma1, [&] { return gan_loss_generator(adv.d_f, s.u_hat, s.u, adv.negative_f); });
    c.add("gan_s_forward", w.gamma1, [&] { return gan_loss_generator(adv.d_s, s.v_hat, s.v, adv.negative_s); });
    c.add("gan_f_reconstruction", w.gamma1,
          [&] { return gan_loss_generator(adv.d_f, s.u_rec, s.u, adv.negative_f); });
    c.add("gan_s_reconstruction", w.gamma1,
          [&] { return gan_loss_generator(adv.d_s, s.v_rec, s.v, adv.negative_s); });

    c.add("content_u_vhat", w.gamma2, [&] { return content_loss(s.u, s.v_hat, fx); });
    c.add("content_v_uhat", w.gamma2, [&] { return content_loss(s.v, s.u_hat, fx); });

    c.add("pixel_u_urec", w.gamma3, [&] { return pixel_loss(s.u, s.u_rec); });
    c.add("pixel_v_vrec", w.gamma3, [&] { return pixel_loss(s.v, s.v_rec); });
    if (paired)
        c.add("pixel_u_uhat", w.gamma3 * w.beta1, [&] { return pixel_loss(s.u, s.u_hat); });

    c.add("perceptual_u_urec", w.gamma4, [&] { return perceptual_loss(s.u, s.u_rec, fx, w, opt); });
    c.add("perceptual_v_vrec", w.gamma4, [&] { return perceptual_loss(s.v, s.v_rec, fx, w, opt); });

    c.add("mask_f_cycle", w.gamma5, [&] { return mask_loss(s.mask_f.value, s.mask_rec_f.value); });
    c.add("mask_s_cycle", w.gamma5, [&] { return mask_loss(s.mask_s.value, s.mask_rec_s.value); });
    const double beta2_coefficient = opt.beta2_inside_gamma5 ? w.gamma5 * w.beta2 : w.beta2;
    c.add(paired ? "mask_truth_forward" : "mask_sampled_forward", beta2_coefficient,
          [&] { return mask_loss(s.m.to(s.mask_f.value.dtype()), s.mask_f.value); });

    return c.finish();
}

} // namespace

LossBreakdown total_loss_unpaired(const engine::CycleState& state, const AdversarialInputs& adversarial,
                                  const LossWeights& weights, FeatureExtractor& fx, const LossOptions& options) {
    return total_loss(state, adversarial, weights, fx, options, false);
}

LossBreakdown total_loss_paired(const engine::CycleState& state, const AdversarialInputs& adversarial,
                                const LossWeights& weights, FeatureExtractor& fx, const LossOptions& options) {
    return total_loss(state, adversarial, weights, fx, options, true);
}

} // namespace deshadow::losses
