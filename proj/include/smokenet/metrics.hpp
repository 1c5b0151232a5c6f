#pragma once

#include <algorithm>
#include <chrono>

#include "smokenet/model.hpp"

namespace smokenet {

// Per-image IoU with the empty-set rule: both masks empty -> 1, exactly one
// empty -> 0. two_class averages the smoke and background classes.
template <typename S>
std::vector<double> per_image_iou(const TensorPtr<S>& pred, const TensorPtr<S>& target,
                                  double threshold = 0.5, bool two_class = true) {
    check_same_shape(pred, target, "miou");
    const std::int64_t N = pred->shape.n;
    const std::int64_t per = pred->shape.c * pred->shape.h * pred->shape.w;
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(N));
    for (std::int64_t n = 0; n < N; ++n) {
        std::int64_t inter = 0, uni = 0, inter_bg = 0, uni_bg = 0;
        const S* p = pred->data.data() + n * per;
        const S* t = target->data.data() + n * per;
        for (std::int64_t i = 0; i < per; ++i) {
            const bool pp = static_cast<double>(p[i]) >= threshold;
            const bool tt = static_cast<double>(t[i]) >= 0.5;
            inter += (pp && tt) ? 1 : 0;
            uni += (pp || tt) ? 1 : 0;
            inter_bg += (!pp && !tt) ? 1 : 0;
            uni_bg += (!pp || !tt) ? 1 : 0;
        }
        const double fg = uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
        const double bg = uni_bg == 0 ? 1.0 : static_cast<double>(inter_bg) / static_cast<double>(uni_bg);
        out.push_back(two_class ? 0.5 * (fg + bg) : fg);
    }
    return out;
}

template <typename S>
double miou(const TensorPtr<S>& pred, const TensorPtr<S>& target, double threshold = 0.5,
            bool two_class = true) {
    const auto per = per_image_iou(pred, target, threshold, two_class);
    double acc = 0;
    for (double v : per) {
        acc += v;
    }
    return acc / static_cast<double>(per.size());
}

// Analytic FLOPs for a built model at the given input shape; see flops.hpp
// for the per-op conventions.
template <typename S>
std::uint64_t estimate_flops(const SmokeNet<S>& model, Shape input,
                             std::vector<LayerCost>* breakdown = nullptr) {
    return model.flops(input, breakdown);
}

struct FpsReport {
    double fps = 0;
    double median_seconds = 0;
    int warmup = 0;
    int iters = 0;
    Shape input_shape;
    int precision_bits = 32;
    int threads = 1;
    std::string cpu;
};

// Median wall-clock over `iters` eval-mode forwards after `warmup` discarded
// runs; single-threaded by construction.
template <typename S>
FpsReport benchmark_fps(SmokeNet<S>& model, Shape input, int warmup, int iters) {
    if (iters < 3) {
        throw ConfigError(format_msg("benchmark_fps: iters must be >= 3, got ", iters));
    }
    std::mt19937_64 rng(0);
    auto x = uniform<S>(input, rng, S(0), S(1));
    for (int i = 0; i < warmup; ++i) {
        model.forward(x, Mode::eval);
    }
    std::vector<double> seconds;
    seconds.reserve(static_cast<std::size_t>(iters));
    for (int i = 0; i < iters; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        model.forward(x, Mode::eval);
        const auto t1 = std::chrono::steady_clock::now();
        seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    std::nth_element(seconds.begin(), seconds.begin() + seconds.size() / 2, seconds.end());
    FpsReport r;
    r.median_seconds = seconds[seconds.size() / 2];
    r.fps = static_cast<double>(input.n) / r.median_seconds;
    r.warmup = warmup;
    r.iters = iters;
    r.input_shape = input;
    r.precision_bits = sizeof(S) * 8;
    r.cpu = cpu_model_name();
    return r;
}

struct MetricsReport {
    double miou = -1;  // -1 when no labelled data was evaluated
    std::int64_t params = 0;
    std::uint64_t flops = 0;
    double fps = 0;
    Shape input_shape;
    int precision_bits = 32;
    std::string environment;
};

}  // namespace smokenet
