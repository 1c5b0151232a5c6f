#pragma once

#include <cmath>

#include "smokenet/blocks.hpp"

namespace smokenet {

struct ScheduleConfig {
    double eta_max = 0.001;
    double eta_min = 1e-6;
    int total_epochs = 100;

    void validate() const {
        if (!(eta_min >= 0 && eta_min < eta_max)) {
            throw ConfigError("schedule config: need 0 <= eta_min < eta_max");
        }
        if (total_epochs < 1) {
            throw ConfigError("schedule config: total_epochs must be >= 1");
        }
    }
};

// eta_t = eta_min + 1/2 (eta_max - eta_min)(1 + cos(t*pi/T)). Endpoints are
// returned exactly; interior points use the reflection cos(pi - a) = -cos(a)
// so that eta(t) + eta(T-t) stays at eta_max + eta_min to the last ulp.
inline double cosine_lr(int t, const ScheduleConfig& cfg) {
    cfg.validate();
    if (t < 0 || t > cfg.total_epochs) {
        throw ConfigError(format_msg("cosine_lr: epoch ", t, " outside [0, ", cfg.total_epochs, "]"));
    }
    if (t == 0) {
        return cfg.eta_max;
    }
    if (t == cfg.total_epochs) {
        return cfg.eta_min;
    }
    const int T = cfg.total_epochs;
    const int mirrored = std::min(t, T - t);
    double c = std::cos(M_PI * static_cast<double>(mirrored) / static_cast<double>(T));
    if (2 * t > T) {
        c = -c;
    }
    return cfg.eta_min + 0.5 * (cfg.eta_max - cfg.eta_min) * (1.0 + c);
}

// Decoupled AdamW: theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) +
// weight_decay * theta).
template <typename S>
class AdamW {
public:
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-5;

    explicit AdamW(ParamList<S> params, double weight_decay_ = 1e-5) : weight_decay(weight_decay_) {
        for (auto& e : params) {
            if (!e.learnable) {
                continue;
            }
            params_.push_back(e);
            slots_.push_back({std::vector<S>(e.tensor->data.size(), S(0)),
                              std::vector<S>(e.tensor->data.size(), S(0))});
        }
    }

    std::int64_t step_count() const { return t_; }
    const ParamList<S>& params() const { return params_; }

    void step(double lr) {
        for (const auto& e : params_) {
            if (e.tensor->grad.size() != e.tensor->data.size()) {
                throw Error(format_msg("adamw_step: parameter '", e.name, "' has no gradient"));
            }
        }
        ++t_;
        const S b1 = static_cast<S>(beta1);
        const S b2 = static_cast<S>(beta2);
        const S bc1 = S(1) - static_cast<S>(std::pow(beta1, static_cast<double>(t_)));
        const S bc2 = S(1) - static_cast<S>(std::pow(beta2, static_cast<double>(t_)));
        const S lr_s = static_cast<S>(lr);
        const S eps_s = static_cast<S>(eps);
        const S wd = static_cast<S>(weight_decay);
        for (std::size_t p = 0; p < params_.size(); ++p) {
            auto& theta = params_[p].tensor->data;
            const auto& g = params_[p].tensor->grad;
            auto& m = slots_[p].m;
            auto& v = slots_[p].v;
            for (std::size_t i = 0; i < theta.size(); ++i) {
                m[i] = b1 * m[i] + (S(1) - b1) * g[i];
                v[i] = b2 * v[i] + (S(1) - b2) * g[i] * g[i];
                const S mhat = m[i] / bc1;
                const S vhat = v[i] / bc2;
                theta[i] -= lr_s * (mhat / (std::sqrt(vhat) + eps_s) + wd * theta[i]);
            }
        }
    }

    // Exposed for checkpointing.
    struct Slot {
        std::vector<S> m, v;
    };
    std::vector<Slot>& slots() { return slots_; }
    const std::vector<Slot>& slots() const { return slots_; }
    void set_step_count(std::int64_t t) { t_ = t; }

private:
    ParamList<S> params_;
    std::vector<Slot> slots_;
    std::int64_t t_ = 0;
};

}  // namespace smokenet
