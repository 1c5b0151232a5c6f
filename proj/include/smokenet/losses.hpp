#pragma once

#include "smokenet/model.hpp"
#include "smokenet/ops.hpp"

namespace smokenet {

struct LossConfig {
    double alpha = 0.5;  // BCE weight
    double beta = 0.5;   // Dice weight
    std::array<double, 5> gamma{0.5, 0.4, 0.3, 0.2, 0.1};  // stages 2..6
    double dice_smoothing = 1.0;
    double bce_clamp = 1e-7;

    void validate() const {
        if (alpha < 0 || beta < 0 || (alpha == 0 && beta == 0)) {
            throw ConfigError("loss config: alpha/beta must be >= 0 and not both zero");
        }
        for (double g : gamma) {
            if (g < 0) {
                throw ConfigError("loss config: gamma entries must be >= 0");
            }
        }
        if (dice_smoothing <= 0) {
            throw ConfigError("loss config: dice_smoothing must be > 0");
        }
    }
};

// Mean over all pixels of -[y log p + (1-y) log(1-p)], with p clamped away
// from {0,1}.
template <typename S>
TensorPtr<S> bce_loss(const TensorPtr<S>& pred, const TensorPtr<S>& target, const LossConfig& cfg = {}) {
    check_same_shape(pred, target, "bce_loss");
    const S eps = static_cast<S>(cfg.bce_clamp);
    auto p = clamp(pred, eps, S(1) - eps);
    auto pos = mul(target, log_op(p));
    auto neg = mul(affine(target, S(-1), S(1)), log_op(affine(p, S(-1), S(1))));
    return affine(mean_all(add(pos, neg)), S(-1), S(0));
}

// 1 - (2*sum(p*y) + eps) / (sum(p) + sum(y) + eps), per sample, averaged
// over the batch.
template <typename S>
TensorPtr<S> dice_loss(const TensorPtr<S>& pred, const TensorPtr<S>& target, const LossConfig& cfg = {}) {
    check_same_shape(pred, target, "dice_loss");
    const S eps = static_cast<S>(cfg.dice_smoothing);
    auto inter = sum_per_sample(mul(pred, target));
    auto total = add(sum_per_sample(pred), sum_per_sample(target));
    auto ratio = div(affine(inter, S(2), eps), affine(total, S(1), eps));
    return mean_all(affine(ratio, S(-1), S(1)));
}

template <typename S>
TensorPtr<S> combined_loss(const TensorPtr<S>& pred, const TensorPtr<S>& target, const LossConfig& cfg) {
    return add(affine(bce_loss(pred, target, cfg), static_cast<S>(cfg.alpha), S(0)),
               affine(dice_loss(pred, target, cfg), static_cast<S>(cfg.beta), S(0)));
}

// Training objective: the final mask's combined loss with weight 1 plus
// gamma-weighted combined losses over the auxiliary decoder taps.
template <typename S>
TensorPtr<S> layer_wise_loss(const ModelOutput<S>& output, const TensorPtr<S>& target, const LossConfig& cfg) {
    bool any_gamma = false;
    for (double g : cfg.gamma) {
        any_gamma = any_gamma || g > 0;
    }
    if (any_gamma && output.aux_masks.empty()) {
        throw Error("layer_wise_loss: gamma weights are non-zero but no auxiliary masks are present");
    }
    auto total = combined_loss(output.mask, target, cfg);
    for (const auto& [stage, mask] : output.aux_masks) {
        if (stage < 2 || stage > 6) {
            throw Error(format_msg("layer_wise_loss: auxiliary stage ", stage, " out of range [2,6]"));
        }
        const S g = static_cast<S>(cfg.gamma[static_cast<std::size_t>(stage - 2)]);
        total = add(total, affine(combined_loss(mask, target, cfg), g, S(0)));
    }
    return total;
}

}  // namespace smokenet
