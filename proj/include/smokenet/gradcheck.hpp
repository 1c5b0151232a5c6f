#pragma once

#include <functional>

#include "smokenet/losses.hpp"
#include "smokenet/model.hpp"

namespace smokenet {

// Central finite differences against the recorded analytic gradients.
// loss_fn must rebuild the graph from the leaves' current data and return a
// scalar; relative error uses max(|analytic|, |numeric|, 1e-3) as the
// denominator so near-zero gradients are judged on an absolute scale.
template <typename S>
double finite_diff_check(const std::vector<TensorPtr<S>>& leaves,
                         const std::function<TensorPtr<S>()>& loss_fn, double h = 1e-5) {
    for (const auto& l : leaves) {
        l->zero_grad();
    }
    auto loss = loss_fn();
    loss->backward();
    std::vector<std::vector<S>> analytic;
    analytic.reserve(leaves.size());
    for (const auto& l : leaves) {
        analytic.push_back(l->grad.size() == l->data.size() ? l->grad
                                                            : std::vector<S>(l->data.size(), S(0)));
    }

    double max_rel = 0.0;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        auto& l = *leaves[li];
        for (std::size_t i = 0; i < l.data.size(); ++i) {
            const S orig = l.data[i];
            l.data[i] = orig + static_cast<S>(h);
            const double fp = static_cast<double>(loss_fn()->item());
            l.data[i] = orig - static_cast<S>(h);
            const double fm = static_cast<double>(loss_fn()->item());
            l.data[i] = orig;
            const double fd = (fp - fm) / (2.0 * h);
            const double a = static_cast<double>(analytic[li][i]);
            const double denom = std::max({std::abs(fd), std::abs(a), 1e-3});
            max_rel = std::max(max_rel, std::abs(fd - a) / denom);
        }
    }
    return max_rel;
}

struct OpGradReport {
    std::string op;
    double max_rel_err = 0.0;
};

namespace detail {

// Values with pairwise gaps of at least ~8e-3 so kinked ops (max pooling,
// relu, clamp) stay locally linear under the finite-difference step.
inline std::vector<double> well_separated(std::mt19937_64& rng, std::size_t n) {
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) {
        v[i] = 0.01 * static_cast<double>(i) - 0.005 * static_cast<double>(n);
    }
    for (std::size_t i = n; i > 1; --i) {
        std::uniform_int_distribution<std::size_t> d(0, i - 1);
        std::swap(v[i - 1], v[d(rng)]);
    }
    std::uniform_real_distribution<double> noise(-0.001, 0.001);
    for (auto& x : v) {
        x += noise(rng);
    }
    return v;
}

inline TensorPtr<double> rand_tensor(std::mt19937_64& rng, Shape s, double lo, double hi, bool grad = true) {
    return uniform<double>(s, rng, lo, hi, grad);
}

inline TensorPtr<double> separated_tensor(std::mt19937_64& rng, Shape s, bool grad = true) {
    auto vals = well_separated(rng, static_cast<std::size_t>(s.numel()));
    auto t = make_tensor<double>(s, grad);
    std::copy(vals.begin(), vals.end(), t->data.begin());
    return t;
}

}  // namespace detail

// Finite-difference suite over every differentiable op and both signature
// blocks, at 64-bit precision. Returns the max relative error per op across
// `seeds` random instances.
inline std::vector<OpGradReport> run_gradient_suite(int seeds) {
    std::vector<OpGradReport> reports;
    auto record = [&reports](const std::string& name, double err) {
        for (auto& r : reports) {
            if (r.op == name) {
                r.max_rel_err = std::max(r.max_rel_err, err);
                return;
            }
        }
        reports.push_back({name, err});
    };

    for (int seed = 0; seed < seeds; ++seed) {
        std::mt19937_64 rng(0x5eed0000u + static_cast<unsigned>(seed));
        using namespace detail;

        {
            auto x = rand_tensor(rng, {2, 3, 5, 6}, -1, 1);
            auto w = rand_tensor(rng, {4, 3, 3, 3}, -0.5, 0.5);
            auto b = rand_tensor(rng, {1, 4, 1, 1}, -0.5, 0.5);
            ConvKernel<double> k{w, b};
            k.stride = {1 + seed % 2, 1};
            k.padding = {seed % 3, 1};
            k.dilation = {1, 1 + seed % 2};
            record("conv2d", finite_diff_check<double>({x, w, b}, [&] { return mean_all(conv2d(x, k)); }));
        }
        {
            auto x = rand_tensor(rng, {2, 3, 4, 5}, -1, 1);
            auto w = rand_tensor(rng, {3, 2, 3, 3}, -0.5, 0.5);
            auto b = rand_tensor(rng, {1, 2, 1, 1}, -0.5, 0.5);
            ConvKernel<double> k{w, b};
            k.stride = {2, 2};
            k.padding = {1, 1};
            k.output_padding = {1, 1};
            record("transposed_conv2d",
                   finite_diff_check<double>({x, w, b}, [&] { return mean_all(transposed_conv2d(x, k)); }));
        }
        {
            auto x = rand_tensor(rng, {1, 2, 6, 6}, -1, 1);
            auto wv = rand_tensor(rng, {2, 2, 3, 1}, -0.5, 0.5);
            auto wh = rand_tensor(rng, {2, 2, 1, 3}, -0.5, 0.5);
            ConvKernel<double> v{wv, nullptr};
            v.padding = {1, 0};
            ConvKernel<double> h{wh, nullptr};
            h.padding = {0, 1};
            record("sequential_factorized_conv", finite_diff_check<double>({x, wv, wh}, [&] {
                       return mean_all(sequential_factorized_conv(x, v, h));
                   }));
        }
        {
            auto x = detail::separated_tensor(rng, {2, 2, 6, 6});
            record("max_pool2d", finite_diff_check<double>({x}, [&] { return mean_all(max_pool2d(x)); }));
            auto xo = detail::separated_tensor(rng, {1, 2, 5, 5});
            record("max_pool2d", finite_diff_check<double>({xo}, [&] { return mean_all(max_pool2d(xo)); }));
        }
        {
            auto x = rand_tensor(rng, {3, 4, 3, 3}, -1, 1);
            auto st = NormState<double>::batch(4);
            record("batch_norm.train", finite_diff_check<double>({x, st.gamma, st.beta}, [&] {
                       return mean_all(mul(batch_norm(x, st, Mode::train), x));
                   }));
            auto st2 = NormState<double>::batch(4);
            for (auto& v : st2.running_mean->data) {
                v = 0.3;
            }
            for (auto& v : st2.running_var->data) {
                v = 1.7;
            }
            st2.ever_updated = true;
            record("batch_norm.eval", finite_diff_check<double>({x, st2.gamma, st2.beta}, [&] {
                       return mean_all(mul(batch_norm(x, st2, Mode::eval), x));
                   }));
        }
        {
            auto x = rand_tensor(rng, {2, 4, 2, 3}, -1, 1);
            auto st = NormState<double>::layer(4);
            record("layer_norm", finite_diff_check<double>({x, st.gamma, st.beta}, [&] {
                       return mean_all(mul(layer_norm(x, st), x));
                   }));
        }
        {
            const AxisSet views[] = {{false, true, true}, {true, true, false}, {true, false, true}};
            const char* names[] = {"softmax_axes.hw", "softmax_axes.hc", "softmax_axes.wc"};
            for (int i = 0; i < 3; ++i) {
                auto x = rand_tensor(rng, {2, 4, 3, 3}, -2, 2);
                const AxisSet ax = views[i];
                record(names[i], finite_diff_check<double>({x}, [&] {
                           return mean_all(mul(softmax_axes(x, ax), x));
                       }));
            }
        }
        {
            auto x = detail::separated_tensor(rng, {2, 3, 4, 4});
            record("relu", finite_diff_check<double>({x}, [&] { return mean_all(mul(relu(x), x)); }));
        }
        {
            auto x = rand_tensor(rng, {2, 3, 4, 4}, -2, 2);
            record("sigmoid", finite_diff_check<double>({x}, [&] { return mean_all(mul(sigmoid(x), x)); }));
            record("gelu", finite_diff_check<double>({x}, [&] { return mean_all(mul(gelu(x), x)); }));
        }
        {
            auto x = rand_tensor(rng, {1, 8, 3, 3}, -1, 1);
            record("channel_split", finite_diff_check<double>({x}, [&] {
                       auto parts = channel_split(x, 4);
                       return mean_all(mul(parts[1], parts[3]));
                   }));
            auto a = rand_tensor(rng, {1, 2, 3, 3}, -1, 1);
            auto b = rand_tensor(rng, {1, 3, 3, 3}, -1, 1);
            record("channel_concat", finite_diff_check<double>({a, b}, [&] {
                       auto cat = channel_concat<double>({a, b});
                       return mean_all(mul(cat, cat));
                   }));
        }
        {
            auto a = rand_tensor(rng, {2, 2, 3, 3}, -1, 1);
            auto b = rand_tensor(rng, {2, 2, 3, 3}, 0.5, 1.5);
            record("add", finite_diff_check<double>({a, b}, [&] { return mean_all(mul(add(a, b), a)); }));
            record("mul", finite_diff_check<double>({a, b}, [&] { return mean_all(mul(mul(a, b), a)); }));
            record("div", finite_diff_check<double>({a, b}, [&] { return mean_all(div(a, b)); }));
            record("affine", finite_diff_check<double>({a}, [&] {
                       return mean_all(affine(a, 2.5, -0.75));
                   }));
        }
        {
            auto x = rand_tensor(rng, {2, 2, 3, 3}, 0.1, 1.0);
            record("log", finite_diff_check<double>({x}, [&] { return mean_all(log_op(x)); }));
            auto y = rand_tensor(rng, {2, 2, 3, 3}, 0.1, 0.9);
            record("clamp", finite_diff_check<double>({y}, [&] {
                       return mean_all(mul(clamp(y, 0.05, 0.95), y));
                   }));
        }
        {
            auto x = rand_tensor(rng, {2, 3, 2, 2}, -1, 1);
            record("sum_all", finite_diff_check<double>({x}, [&] { return sum_all(mul(x, x)); }));
            record("sum_per_sample", finite_diff_check<double>({x}, [&] {
                       auto s = sum_per_sample(x);
                       return mean_all(mul(s, s));
                   }));
            record("upsample_nearest", finite_diff_check<double>({x}, [&] {
                       auto u = upsample_nearest(x, 2);
                       return mean_all(mul(u, u));
                   }));
        }
        {
            auto pred = rand_tensor(rng, {2, 1, 4, 4}, 0.05, 0.95);
            auto target = make_tensor<double>({2, 1, 4, 4}, false);
            std::uniform_int_distribution<int> bit(0, 1);
            for (auto& v : target->data) {
                v = static_cast<double>(bit(rng));
            }
            LossConfig lc;
            record("bce_loss", finite_diff_check<double>({pred}, [&] { return bce_loss(pred, target, lc); }));
            record("dice_loss", finite_diff_check<double>({pred}, [&] { return dice_loss(pred, target, lc); }));
            record("combined_loss",
                   finite_diff_check<double>({pred}, [&] { return combined_loss(pred, target, lc); }));
        }
    }
    return reports;
}

// Full-block checks (tolerance 1e-5 in the acceptance suite): both encoder
// block types plus the decoder-side operators.
inline std::vector<OpGradReport> run_block_gradient_suite(int seeds) {
    std::vector<OpGradReport> reports;
    auto record = [&reports](const std::string& name, double err) {
        for (auto& r : reports) {
            if (r.op == name) {
                r.max_rel_err = std::max(r.max_rel_err, err);
                return;
            }
        }
        reports.push_back({name, err});
    };

    for (int seed = 0; seed < seeds; ++seed) {
        std::mt19937_64 rng(0xb10c0000u + static_cast<unsigned>(seed));
        using detail::rand_tensor;

        {
            MultiscaleStageSpec sp;
            sp.in_channels = 4;
            sp.out_channels = 8;
            MultiscaleStage<double> stage(rng, sp);
            auto x = rand_tensor(rng, {2, 4, 4, 4}, -1, 1);
            ParamList<double> params;
            stage.collect(params, "ms");
            std::vector<TensorPtr<double>> leaves{x};
            for (auto& e : params) {
                if (e.learnable) {
                    leaves.push_back(e.tensor);
                }
            }
            record("multiscale_forward", finite_diff_check<double>(leaves, [&] {
                       return mean_all(stage.forward(x, Mode::train));
                   }));
        }
        {
            MultiviewStage<double> stage(rng, MultiviewStageSpec{8, 16});
            auto x = rand_tensor(rng, {1, 8, 4, 4}, -1, 1);
            ParamList<double> params;
            stage.collect(params, "mv");
            std::vector<TensorPtr<double>> leaves{x};
            for (auto& e : params) {
                if (e.learnable) {
                    leaves.push_back(e.tensor);
                }
            }
            record("multiview_forward", finite_diff_check<double>(leaves, [&] {
                       return mean_all(stage.forward(x, Mode::train));
                   }));
        }
        {
            auto up = TransposedConv2dLayer<double>::upsampler(rng, 8, 4);
            auto enc = rand_tensor(rng, {1, 4, 6, 6}, -1, 1);
            auto lower = rand_tensor(rng, {1, 8, 3, 3}, -1, 1);
            record("skip_pathway", finite_diff_check<double>({enc, lower, up.kernel.weight, up.kernel.bias},
                                                             [&] {
                                                                 return mean_all(skip_pathway(enc, lower, up));
                                                             }));
        }
        {
            DecoderStage<double> d;
            d.up = TransposedConv2dLayer<double>::upsampler(rng, 8, 4);
            d.out_conv = TransposedConv2dLayer<double>::upsampler(rng, 4, 4);
            auto skip = rand_tensor(rng, {1, 4, 4, 4}, -1, 1);
            auto lower = rand_tensor(rng, {1, 8, 2, 2}, -1, 1);
            record("decoder_stage_forward",
                   finite_diff_check<double>({skip, lower, d.up->kernel.weight, d.out_conv.kernel.weight},
                                             [&] { return mean_all(d.forward(skip, lower).output); }));
        }
        {
            SegmentationHead<double> head;
            head.conv = TransposedConv2dLayer<double>::same_size(rng, 4, 1);
            auto x = rand_tensor(rng, {1, 4, 4, 4}, -1, 1);
            record("segmentation_head",
                   finite_diff_check<double>({x, head.conv.kernel.weight, head.conv.kernel.bias},
                                             [&] { return mean_all(head.forward(x)); }));
        }
    }
    return reports;
}

}  // namespace smokenet
