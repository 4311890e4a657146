#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "deshadow/cycle.hpp"
#include "deshadow/features.hpp"

namespace deshadow::losses {

/// Weights of the total objective and of the perceptual ensemble.
struct LossWeights {
    double gamma1 = 250;   ///< adversarial
    double gamma2 = 10;    ///< content
    double gamma3 = 100;   ///< pixel cycle
    double gamma4 = 30;    ///< perceptual cycle
    double gamma5 = 60;    ///< mask
    double beta1 = 0;      ///< paired forward pixel term
    double beta2 = 100;    ///< forward mask term
    double alpha1 = 1;     ///< color
    double alpha2 = 0.1;   ///< content
    double alpha3 = 10000; ///< style

    static LossWeights unpaired();
    static LossWeights paired();
};

struct LossOptions {
    double color_sigma = 3.0;
    /// Divide Gram matrices by (positions x channels); false gives raw F^T F.
    bool gram_normalize = true;
    /// Multiply the beta2 mask term by gamma5 (true) or add it standalone.
    bool beta2_inside_gamma5 = true;
};

using FeatureExtractor = features::FeatureExtractor;

/// Patch discriminator seen as a function of a [N, 6, H, W] pair.
using PatchCritic = std::function<torch::Tensor(const torch::Tensor&)>;

torch::Tensor pixel_loss(const torch::Tensor& a, const torch::Tensor& b);

/// Separable Gaussian blur with radius ceil(3 sigma) and mirrored borders.
/// Accepts [C, H, W] or [N, C, H, W].
torch::Tensor gaussian_blur(const torch::Tensor& images, double sigma);
torch::Tensor color_loss(const torch::Tensor& a, const torch::Tensor& b, double sigma);

torch::Tensor content_loss(const torch::Tensor& a, const torch::Tensor& b, FeatureExtractor& fx);

/// [N, D, h, w] -> [N, D, D].
torch::Tensor gram_matrix(const torch::Tensor& features, bool normalize = true);
torch::Tensor style_loss(const torch::Tensor& a, const torch::Tensor& b, FeatureExtractor& fx, bool normalize = true);

torch::Tensor perceptual_loss(const torch::Tensor& a, const torch::Tensor& b, FeatureExtractor& fx,
                              const LossWeights& weights, const LossOptions& options = {});

/// 1/2 [MSE(1, D(fake, reference)) + MSE(0, D(negative, reference))].
torch::Tensor gan_loss_generator(const PatchCritic& critic, const torch::Tensor& fake, const torch::Tensor& reference,
                                 const torch::Tensor& negative);
/// 1/2 [MSE(1, D(real, reference)) + MSE(0, D(fake_from_buffer, reference))].
torch::Tensor gan_loss_discriminator(const PatchCritic& critic, const torch::Tensor& real,
                                     const torch::Tensor& reference, const torch::Tensor& fake_from_buffer);

torch::Tensor mask_loss(const torch::Tensor& m1, const torch::Tensor& m2);

struct LossTerm {
    std::string name;
    torch::Tensor value;      ///< unweighted loss (scalar)
    double coefficient = 0.0; ///< effective multiplier inside the total
};

struct LossBreakdown {
    torch::Tensor total;
    std::vector<LossTerm> terms;

    const LossTerm& term(const std::string& name) const;
    double weighted(const std::string& name) const;
    /// Unweighted values keyed by name.
    std::map<std::string, double> values() const;
};

/// Discriminators and replay-buffer negatives the adversarial terms need.
/// `negative_f` is a synthetic shadow image (negative for D_f),
/// `negative_s` a synthetic shadow-free image (negative for D_s).
struct AdversarialInputs {
    PatchCritic d_f;
    PatchCritic d_s;
    torch::Tensor negative_f;
    torch::Tensor negative_s;
};

LossBreakdown total_loss_unpaired(const engine::CycleState& state, const AdversarialInputs& adversarial,
                                  const LossWeights& weights, FeatureExtractor& fx, const LossOptions& options = {});
LossBreakdown total_loss_paired(const engine::CycleState& state, const AdversarialInputs& adversarial,
                                const LossWeights& weights, FeatureExtractor& fx, const LossOptions& options = {});

} // namespace deshadow::losses
