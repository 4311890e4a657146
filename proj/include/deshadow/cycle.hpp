#pragma once

#include <string>
#include <vector>

#include <torch/torch.h>

namespace deshadow::engine {

/// A binarized difference map that still carries a gradient. `value` is the
/// hard {0,1} mask in the forward pass; its gradient is that of `soft`.
struct CycleMask {
    torch::Tensor value; ///< [N, 1, H, W], straight-through hard mask
    torch::Tensor soft;  ///< [N, 1, H, W], sigmoid relaxation in [0, 1]

    bool defined() const { return value.defined(); }
    torch::Tensor hard() const { return value.detach(); }
};

/// Everything one training cycle produces. Images are [N, 3, H, W] in model
/// space; u is shadow-free, v is the shadow image, m the conditioning mask
/// (ground truth when paired, a mask-bank draw when unpaired).
struct CycleState {
    torch::Tensor u;
    torch::Tensor v;
    torch::Tensor m;
    bool paired = false;

    // forward step
    torch::Tensor u_hat; ///< G_f(v)
    torch::Tensor v_hat; ///< G_s(u, m)
    CycleMask mask_f;    ///< Bin(u_hat - v)
    CycleMask mask_s;    ///< Bin(u - v_hat)

    // reconstruction step
    torch::Tensor u_rec;
    torch::Tensor v_rec;
    CycleMask mask_rec_f;
    CycleMask mask_rec_s;

    bool has_forward() const { return u_hat.defined() && v_hat.defined() && mask_f.defined() && mask_s.defined(); }
    bool has_reconstruction() const {
        return u_rec.defined() && v_rec.defined() && mask_rec_f.defined() && mask_rec_s.defined();
    }

    /// Throws ContractViolation naming the first missing field.
    void require_complete() const;
    /// Names of tensors holding non-finite values (empty when all finite).
    std::vector<std::string> non_finite_fields() const;
};

} // namespace deshadow::engine
