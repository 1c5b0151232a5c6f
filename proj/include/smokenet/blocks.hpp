#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>

#include "smokenet/flops.hpp"
#include "smokenet/ops.hpp"

namespace smokenet {

template <typename S>
struct ParamEntry {
    std::string name;
    TensorPtr<S> tensor;
    bool learnable = true;
};

template <typename S>
using ParamList = std::vector<ParamEntry<S>>;

// Kaiming-uniform fan-in initialization; fan_in is taken from the second
// weight axis times the kernel extent, biases start at zero.
template <typename S>
void kaiming_uniform(std::mt19937_64& rng, const TensorPtr<S>& w) {
    const std::int64_t fan_in = w->shape.c * w->shape.h * w->shape.w;
    const S bound = static_cast<S>(std::sqrt(6.0 / static_cast<double>(fan_in)));
    std::uniform_real_distribution<S> dist(-bound, bound);
    for (auto& v : w->data) {
        v = dist(rng);
    }
}

// Selectable kernels for the multiscale chunks. Two-dimensional entries are
// realized as a horizontal 1xm pass followed by a vertical kx1 pass.
enum class KernelChoice { k1x3, k3x1, k1x5, k5x1, k3x3, k3x5, k5x3, k5x5 };

struct KernelDims {
    int kh = 1;
    int kw = 1;
};

inline KernelDims kernel_dims(KernelChoice c) {
    switch (c) {
        case KernelChoice::k1x3: return {1, 3};
        case KernelChoice::k3x1: return {3, 1};
        case KernelChoice::k1x5: return {1, 5};
        case KernelChoice::k5x1: return {5, 1};
        case KernelChoice::k3x3: return {3, 3};
        case KernelChoice::k3x5: return {3, 5};
        case KernelChoice::k5x3: return {5, 3};
        case KernelChoice::k5x5: return {5, 5};
    }
    throw ConfigError("kernel_dims: unknown kernel choice");
}

inline std::string to_string(KernelChoice c) {
    const KernelDims d = kernel_dims(c);
    return format_msg(d.kh, "x", d.kw);
}

inline KernelChoice parse_kernel_choice(const std::string& s) {
    for (KernelChoice c : {KernelChoice::k1x3, KernelChoice::k3x1, KernelChoice::k1x5, KernelChoice::k5x1,
                           KernelChoice::k3x3, KernelChoice::k3x5, KernelChoice::k5x3, KernelChoice::k5x5}) {
        if (to_string(c) == s) {
            return c;
        }
    }
    throw ConfigError(format_msg("unknown kernel choice '", s,
                                 "' (expected one of 1x3,3x1,1x5,5x1,3x3,3x5,5x3,5x5)"));
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

template <typename S>
struct Conv2dLayer {
    ConvKernel<S> kernel;

    Conv2dLayer() = default;
    Conv2dLayer(std::mt19937_64& rng, std::int64_t cin, std::int64_t cout, int kh, int kw,
                std::pair<int, int> stride = {1, 1}, std::pair<int, int> padding = {0, 0},
                std::pair<int, int> dilation = {1, 1}, bool bias = true) {
        kernel.weight = make_tensor<S>({cout, cin, kh, kw}, true);
        kaiming_uniform(rng, kernel.weight);
        if (bias) {
            kernel.bias = zeros<S>({1, cout, 1, 1}, true);
        }
        kernel.stride = stride;
        kernel.padding = padding;
        kernel.dilation = dilation;
    }

    TensorPtr<S> forward(const TensorPtr<S>& x) const { return conv2d(x, kernel); }

    void collect(ParamList<S>& out, const std::string& prefix) const {
        out.push_back({prefix + ".weight", kernel.weight, true});
        if (kernel.bias) {
            out.push_back({prefix + ".bias", kernel.bias, true});
        }
    }

    Shape out_shape(Shape in) const {
        const auto& w = kernel.weight->shape;
        const std::int64_t hout =
            (in.h + 2 * kernel.padding.first - kernel.dilation.first * (w.h - 1) - 1) / kernel.stride.first + 1;
        const std::int64_t wout =
            (in.w + 2 * kernel.padding.second - kernel.dilation.second * (w.w - 1) - 1) / kernel.stride.second + 1;
        return {in.n, w.n, hout, wout};
    }

    Shape cost(Shape in, const std::string& name, std::vector<LayerCost>& out) const {
        const Shape o = out_shape(in);
        const auto& w = kernel.weight->shape;
        out.push_back({name, conv_flops(in.n, w.c, w.n, w.h, w.w, o.h, o.w), true});
        return o;
    }
};

template <typename S>
struct TransposedConv2dLayer {
    ConvKernel<S> kernel;

    TransposedConv2dLayer() = default;
    TransposedConv2dLayer(std::mt19937_64& rng, std::int64_t cin, std::int64_t cout, int kh, int kw,
                          std::pair<int, int> stride, std::pair<int, int> padding,
                          std::pair<int, int> output_padding, bool bias = true) {
        kernel.weight = make_tensor<S>({cin, cout, kh, kw}, true);
        kaiming_uniform(rng, kernel.weight);
        if (bias) {
            kernel.bias = zeros<S>({1, cout, 1, 1}, true);
        }
        kernel.stride = stride;
        kernel.padding = padding;
        kernel.output_padding = output_padding;
    }

    // tconv 3x3, stride 2, padding 1, output padding 1: exact 2x upsampling.
    static TransposedConv2dLayer upsampler(std::mt19937_64& rng, std::int64_t cin, std::int64_t cout) {
        return TransposedConv2dLayer(rng, cin, cout, 3, 3, {2, 2}, {1, 1}, {1, 1});
    }

    // tconv 3x3, stride 1, padding 1: resolution-preserving.
    static TransposedConv2dLayer same_size(std::mt19937_64& rng, std::int64_t cin, std::int64_t cout) {
        return TransposedConv2dLayer(rng, cin, cout, 3, 3, {1, 1}, {1, 1}, {0, 0});
    }

    TensorPtr<S> forward(const TensorPtr<S>& x) const { return transposed_conv2d(x, kernel); }

    void collect(ParamList<S>& out, const std::string& prefix) const {
        out.push_back({prefix + ".weight", kernel.weight, true});
        if (kernel.bias) {
            out.push_back({prefix + ".bias", kernel.bias, true});
        }
    }

    Shape out_shape(Shape in) const {
        const auto& w = kernel.weight->shape;
        const std::int64_t hout = (in.h - 1) * kernel.stride.first - 2 * kernel.padding.first +
                                  kernel.dilation.first * (w.h - 1) + 1 + kernel.output_padding.first;
        const std::int64_t wout = (in.w - 1) * kernel.stride.second - 2 * kernel.padding.second +
                                  kernel.dilation.second * (w.w - 1) + 1 + kernel.output_padding.second;
        return {in.n, w.c, hout, wout};
    }

    Shape cost(Shape in, const std::string& name, std::vector<LayerCost>& out) const {
        const Shape o = out_shape(in);
        const auto& w = kernel.weight->shape;
        out.push_back({name, tconv_flops(in.n, w.n, w.c, w.h, w.w, in.h, in.w), true});
        return o;
    }
};

// Norm-state collection shares the ParamEntry list; running stats are
// non-learnable buffers but still checkpointed.
template <typename S>
void collect_norm(const NormState<S>& st, ParamList<S>& out, const std::string& prefix) {
    out.push_back({prefix + ".gamma", st.gamma, true});
    out.push_back({prefix + ".beta", st.beta, true});
    if (st.kind == NormKind::batch) {
        out.push_back({prefix + ".running_mean", st.running_mean, false});
        out.push_back({prefix + ".running_var", st.running_var, false});
    }
}

// A selectable conv materialized as its 1-D factors. "Same" padding
// (d*(k-1)/2 per axis) keeps the spatial extents.
template <typename S>
struct SelectedConv {
    std::optional<Conv2dLayer<S>> horizontal;  // 1 x kw
    std::optional<Conv2dLayer<S>> vertical;    // kh x 1

    SelectedConv() = default;
    SelectedConv(std::mt19937_64& rng, std::int64_t channels, KernelChoice choice, int dilation) {
        const KernelDims d = kernel_dims(choice);
        if (d.kw > 1) {
            horizontal.emplace(rng, channels, channels, 1, d.kw, std::pair<int, int>{1, 1},
                               std::pair<int, int>{0, dilation * (d.kw - 1) / 2},
                               std::pair<int, int>{1, dilation});
        }
        if (d.kh > 1) {
            vertical.emplace(rng, channels, channels, d.kh, 1, std::pair<int, int>{1, 1},
                             std::pair<int, int>{dilation * (d.kh - 1) / 2, 0},
                             std::pair<int, int>{dilation, 1});
        }
    }

    TensorPtr<S> forward(const TensorPtr<S>& x) const {
        TensorPtr<S> y = x;
        if (horizontal) {
            y = horizontal->forward(y);
        }
        if (vertical) {
            y = vertical->forward(y);
        }
        return y;
    }

    void collect(ParamList<S>& out, const std::string& prefix) const {
        if (horizontal) {
            horizontal->collect(out, prefix + ".h");
        }
        if (vertical) {
            vertical->collect(out, prefix + ".v");
        }
    }

    Shape cost(Shape in, const std::string& name, std::vector<LayerCost>& out) const {
        Shape s = in;
        if (horizontal) {
            s = horizontal->cost(s, name + ".h", out);
        }
        if (vertical) {
            s = vertical->cost(s, name + ".v", out);
        }
        return s;
    }
};

// ---------------------------------------------------------------------------
// Encoder stages
// ---------------------------------------------------------------------------

enum class StageKind { multiscale, multiview, normal_conv, spatial_attention };

inline std::string to_string(StageKind k) {
    switch (k) {
        case StageKind::multiscale: return "multiscale";
        case StageKind::multiview: return "multiview";
        case StageKind::normal_conv: return "normal_conv";
        case StageKind::spatial_attention: return "spatial_attention";
    }
    throw ConfigError("to_string: unknown stage kind");
}

inline StageKind parse_stage_kind(const std::string& s) {
    for (StageKind k : {StageKind::multiscale, StageKind::multiview, StageKind::normal_conv,
                        StageKind::spatial_attention}) {
        if (to_string(k) == s) {
            return k;
        }
    }
    throw ConfigError(format_msg("unknown stage kind '", s, "'"));
}

template <typename S>
struct EncoderStage {
    virtual ~EncoderStage() = default;
    virtual TensorPtr<S> forward(const TensorPtr<S>& x, Mode mode) = 0;
    virtual void collect(ParamList<S>& out, const std::string& prefix) = 0;
    virtual Shape cost(Shape in, const std::string& prefix, std::vector<LayerCost>& out) const = 0;
    virtual std::int64_t in_channels() const = 0;
    virtual std::int64_t out_channels() const = 0;
};

struct MultiscaleStageSpec {
    std::int64_t in_channels = 0;
    std::int64_t out_channels = 0;
    KernelChoice selected_kernel = KernelChoice::k3x3;
    int dilation_rate = 2;
};

// Multiscale module: split into four chunks processed as
// {identity, 1x1 conv, selected conv, dilated selected conv}, each with ReLU
// then batch norm, re-fused by concat, projected iff the channel count
// changes, then ReLU and 2x2 max pooling.
template <typename S>
struct MultiscaleStage : EncoderStage<S> {
    MultiscaleStageSpec spec;
    Conv2dLayer<S> chunk2;
    SelectedConv<S> chunk3;
    SelectedConv<S> chunk4;
    std::array<NormState<S>, 4> bn;
    std::optional<Conv2dLayer<S>> proj;

    MultiscaleStage(std::mt19937_64& rng, MultiscaleStageSpec sp) : spec(sp) {
        if (sp.in_channels % 4 != 0) {
            throw ConfigError(format_msg("multiscale stage: in_channels=", sp.in_channels,
                                         " not divisible by 4"));
        }
        const std::int64_t cq = sp.in_channels / 4;
        chunk2 = Conv2dLayer<S>(rng, cq, cq, 1, 1);
        chunk3 = SelectedConv<S>(rng, cq, sp.selected_kernel, 1);
        chunk4 = SelectedConv<S>(rng, cq, sp.selected_kernel, sp.dilation_rate);
        for (auto& b : bn) {
            b = NormState<S>::batch(cq);
        }
        if (sp.in_channels != sp.out_channels) {
            proj.emplace(rng, sp.in_channels, sp.out_channels, 1, 1);
        }
    }

    TensorPtr<S> forward(const TensorPtr<S>& x, Mode mode) override {
        if (x->shape.c != spec.in_channels) {
            throw ShapeError(format_msg("multiscale stage: channel axis mismatch: input C=", x->shape.c,
                                        ", expected ", spec.in_channels));
        }
        auto parts = channel_split(x, 4);
        std::array<TensorPtr<S>, 4> p = {
            relu(parts[0]),
            relu(chunk2.forward(parts[1])),
            relu(chunk3.forward(parts[2])),
            relu(chunk4.forward(parts[3])),
        };
        std::vector<TensorPtr<S>> q;
        q.reserve(4);
        for (int i = 0; i < 4; ++i) {
            q.push_back(batch_norm(p[static_cast<std::size_t>(i)], bn[static_cast<std::size_t>(i)], mode));
        }
        auto cat = channel_concat(q);
        auto y = proj ? proj->forward(cat) : cat;
        return max_pool2d(relu(y));
    }

    void collect(ParamList<S>& out, const std::string& prefix) override {
        chunk2.collect(out, prefix + ".chunk2");
        chunk3.collect(out, prefix + ".chunk3");
        chunk4.collect(out, prefix + ".chunk4");
        for (int i = 0; i < 4; ++i) {
            collect_norm(bn[static_cast<std::size_t>(i)], out, format_msg(prefix, ".bn", i + 1));
        }
        if (proj) {
            proj->collect(out, prefix + ".proj");
        }
    }

    Shape cost(Shape in, const std::string& prefix, std::vector<LayerCost>& out) const override {
        const Shape part{in.n, in.c / 4, in.h, in.w};
        out.push_back({prefix + ".chunk1.relu", elem_flops(part, kFlopsPerElemRelu)});
        chunk2.cost(part, prefix + ".chunk2.conv", out);
        out.push_back({prefix + ".chunk2.relu", elem_flops(part, kFlopsPerElemRelu)});
        chunk3.cost(part, prefix + ".chunk3.conv", out);
        out.push_back({prefix + ".chunk3.relu", elem_flops(part, kFlopsPerElemRelu)});
        chunk4.cost(part, prefix + ".chunk4.conv", out);
        out.push_back({prefix + ".chunk4.relu", elem_flops(part, kFlopsPerElemRelu)});
        out.push_back({prefix + ".bn", 4 * elem_flops(part, kFlopsPerElemBatchNorm)});
        Shape cat{in.n, in.c, in.h, in.w};
        Shape y = cat;
        if (proj) {
            y = proj->cost(cat, prefix + ".proj", out);
        }
        out.push_back({prefix + ".relu", elem_flops(y, kFlopsPerElemRelu)});
        const Shape pooled{y.n, y.c, (y.h + 1) / 2, (y.w + 1) / 2};
        out.push_back({prefix + ".pool", elem_flops(pooled, kFlopsPerOutElemMaxPool)});
        return pooled;
    }

    std::int64_t in_channels() const override { return spec.in_channels; }
    std::int64_t out_channels() const override { return spec.out_channels; }
};

struct MultiviewStageSpec {
    std::int64_t in_channels = 0;
    std::int64_t out_channels = 0;
};

// Multiview linear attention: four chunks gated by softmax maps over
// {identity, spatial, height-channel, width-channel} views, re-fused by a
// pointwise conv, then layer norm, GELU and 2x2 max pooling.
template <typename S>
struct MultiviewStage : EncoderStage<S> {
    MultiviewStageSpec spec;
    Conv2dLayer<S> fuse;
    NormState<S> ln;

    MultiviewStage(std::mt19937_64& rng, MultiviewStageSpec sp) : spec(sp) {
        if (sp.in_channels % 4 != 0) {
            throw ConfigError(format_msg("multiview stage: in_channels=", sp.in_channels,
                                         " not divisible by 4"));
        }
        fuse = Conv2dLayer<S>(rng, sp.in_channels, sp.out_channels, 1, 1);
        ln = NormState<S>::layer(sp.out_channels);
    }

    // Pre-concat chunk outputs; chunk 1 passes through untouched.
    std::vector<TensorPtr<S>> attended_parts(const TensorPtr<S>& x) const {
        auto parts = channel_split(x, 4);
        return {
            parts[0],
            mul(softmax_axes(parts[1], AxisSet{.c = false, .h = true, .w = true}), parts[1]),
            mul(softmax_axes(parts[2], AxisSet{.c = true, .h = true, .w = false}), parts[2]),
            mul(softmax_axes(parts[3], AxisSet{.c = true, .h = false, .w = true}), parts[3]),
        };
    }

    TensorPtr<S> forward(const TensorPtr<S>& x, Mode) override {
        if (x->shape.c != spec.in_channels) {
            throw ShapeError(format_msg("multiview stage: channel axis mismatch: input C=", x->shape.c,
                                        ", expected ", spec.in_channels));
        }
        auto cat = channel_concat(attended_parts(x));
        auto y = gelu(layer_norm(fuse.forward(cat), ln));
        return max_pool2d(y);
    }

    void collect(ParamList<S>& out, const std::string& prefix) override {
        fuse.collect(out, prefix + ".fuse");
        collect_norm(ln, out, prefix + ".ln");
    }

    Shape cost(Shape in, const std::string& prefix, std::vector<LayerCost>& out) const override {
        const Shape part{in.n, in.c / 4, in.h, in.w};
        // Three gated views: softmax plus elementwise multiply each.
        out.push_back({prefix + ".attention",
                       3 * (elem_flops(part, kFlopsPerElemSoftmax) + elem_flops(part, kFlopsPerElemMul))});
        const Shape fused = fuse.out_shape(in);
        fuse.cost(in, prefix + ".fuse", out);
        out.push_back({prefix + ".ln", elem_flops(fused, kFlopsPerElemLayerNorm)});
        out.push_back({prefix + ".gelu", elem_flops(fused, kFlopsPerElemGelu)});
        const Shape pooled{fused.n, fused.c, (fused.h + 1) / 2, (fused.w + 1) / 2};
        out.push_back({prefix + ".pool", elem_flops(pooled, kFlopsPerOutElemMaxPool)});
        return pooled;
    }

    std::int64_t in_channels() const override { return spec.in_channels; }
    std::int64_t out_channels() const override { return spec.out_channels; }
};

// Ablation baseline "N": one 3x3 conv + BN + ReLU + pool per stage.
template <typename S>
struct NormalConvStage : EncoderStage<S> {
    std::int64_t cin = 0, cout = 0;
    Conv2dLayer<S> conv;
    NormState<S> bn;

    NormalConvStage(std::mt19937_64& rng, std::int64_t cin_, std::int64_t cout_) : cin(cin_), cout(cout_) {
        conv = Conv2dLayer<S>(rng, cin_, cout_, 3, 3, {1, 1}, {1, 1});
        bn = NormState<S>::batch(cout_);
    }

    TensorPtr<S> forward(const TensorPtr<S>& x, Mode mode) override {
        if (x->shape.c != cin) {
            throw ShapeError(format_msg("normal conv stage: channel axis mismatch: input C=", x->shape.c,
                                        ", expected ", cin));
        }
        return max_pool2d(relu(batch_norm(conv.forward(x), bn, mode)));
    }

    void collect(ParamList<S>& out, const std::string& prefix) override {
        conv.collect(out, prefix + ".conv");
        collect_norm(bn, out, prefix + ".bn");
    }

    Shape cost(Shape in, const std::string& prefix, std::vector<LayerCost>& out) const override {
        const Shape y = conv.cost(in, prefix + ".conv", out);
        out.push_back({prefix + ".bn", elem_flops(y, kFlopsPerElemBatchNorm)});
        out.push_back({prefix + ".relu", elem_flops(y, kFlopsPerElemRelu)});
        const Shape pooled{y.n, y.c, (y.h + 1) / 2, (y.w + 1) / 2};
        out.push_back({prefix + ".pool", elem_flops(pooled, kFlopsPerOutElemMaxPool)});
        return pooled;
    }

    std::int64_t in_channels() const override { return cin; }
    std::int64_t out_channels() const override { return cout; }
};

// Ablation baseline "NA": a single spatial softmax gate over the whole
// tensor (no chunking), then the same fuse/norm/activation/pool tail.
template <typename S>
struct SpatialAttentionStage : EncoderStage<S> {
    std::int64_t cin = 0, cout = 0;
    Conv2dLayer<S> fuse;
    NormState<S> ln;

    SpatialAttentionStage(std::mt19937_64& rng, std::int64_t cin_, std::int64_t cout_) : cin(cin_), cout(cout_) {
        fuse = Conv2dLayer<S>(rng, cin_, cout_, 1, 1);
        ln = NormState<S>::layer(cout_);
    }

    TensorPtr<S> forward(const TensorPtr<S>& x, Mode) override {
        if (x->shape.c != cin) {
            throw ShapeError(format_msg("spatial attention stage: channel axis mismatch: input C=", x->shape.c,
                                        ", expected ", cin));
        }
        auto gated = mul(softmax_axes(x, AxisSet{.c = false, .h = true, .w = true}), x);
        auto y = gelu(layer_norm(fuse.forward(gated), ln));
        return max_pool2d(y);
    }

    void collect(ParamList<S>& out, const std::string& prefix) override {
        fuse.collect(out, prefix + ".fuse");
        collect_norm(ln, out, prefix + ".ln");
    }

    Shape cost(Shape in, const std::string& prefix, std::vector<LayerCost>& out) const override {
        out.push_back({prefix + ".attention",
                       elem_flops(in, kFlopsPerElemSoftmax) + elem_flops(in, kFlopsPerElemMul)});
        const Shape fused = fuse.out_shape(in);
        fuse.cost(in, prefix + ".fuse", out);
        out.push_back({prefix + ".ln", elem_flops(fused, kFlopsPerElemLayerNorm)});
        out.push_back({prefix + ".gelu", elem_flops(fused, kFlopsPerElemGelu)});
        const Shape pooled{fused.n, fused.c, (fused.h + 1) / 2, (fused.w + 1) / 2};
        out.push_back({prefix + ".pool", elem_flops(pooled, kFlopsPerOutElemMaxPool)});
        return pooled;
    }

    std::int64_t in_channels() const override { return cin; }
    std::int64_t out_channels() const override { return cout; }
};

// ---------------------------------------------------------------------------
// Skip pathways, decoder stages, heads
// ---------------------------------------------------------------------------

// F_skip^k = F_encoder^k + Up(F_skip^{k+1}); the deepest stage passes the
// encoder output through unchanged.
template <typename S>
TensorPtr<S> skip_pathway(const TensorPtr<S>& encoder_out, const TensorPtr<S>& lower_skip,
                          const TransposedConv2dLayer<S>& up) {
    if (!lower_skip) {
        return encoder_out;
    }
    if (lower_skip->shape.h * 2 != encoder_out->shape.h || lower_skip->shape.w * 2 != encoder_out->shape.w) {
        throw ShapeError(format_msg("skip_pathway: height/width axes not in 2:1 ratio: encoder ",
                                    encoder_out->shape.str(), ", lower skip ", lower_skip->shape.str()));
    }
    return add(encoder_out, up.forward(lower_skip));
}

template <typename S>
struct DecoderStage {
    std::optional<TransposedConv2dLayer<S>> up;  // C_{k+1} -> C_k; absent at the deepest stage
    TransposedConv2dLayer<S> out_conv;           // C_k -> C'_k, doubles H and W

    struct Result {
        TensorPtr<S> state;   // F_decoder^k, input to the next-shallower stage
        TensorPtr<S> output;  // F_output^k = TConv3x3(F_decoder^k)
    };

    Result forward(const TensorPtr<S>& skip, const TensorPtr<S>& lower_state) const {
        TensorPtr<S> state;
        if (lower_state) {
            if (!up) {
                throw ShapeError("decoder stage: lower input given but stage has no upsampler");
            }
            if (lower_state->shape.h * 2 != skip->shape.h || lower_state->shape.w * 2 != skip->shape.w) {
                throw ShapeError(format_msg("decoder stage: height/width axes not in 2:1 ratio: skip ",
                                            skip->shape.str(), ", lower ", lower_state->shape.str()));
            }
            state = add(skip, up->forward(lower_state));
        } else {
            state = skip;
        }
        return {state, out_conv.forward(state)};
    }
};

// Spec-shaped wrapper returning F_output^k only.
template <typename S>
TensorPtr<S> decoder_stage_forward(const TensorPtr<S>& skip, const TensorPtr<S>& lower_state,
                                   const DecoderStage<S>& stage) {
    return stage.forward(skip, lower_state).output;
}

// Masks are clamped to [kMaskEps, 1-kMaskEps] after the sigmoid so the open
// (0,1) contract survives saturation at either precision.
constexpr double kMaskEps = 1e-7;

// TConv3x3 (stride 1) to one channel, then sigmoid; an optional nearest
// upsample restores full resolution for shallow decoder configurations.
template <typename S>
struct SegmentationHead {
    TransposedConv2dLayer<S> conv;
    int upsample_factor = 1;

    TensorPtr<S> forward(const TensorPtr<S>& x) const {
        auto y = clamp(sigmoid(conv.forward(x)), static_cast<S>(kMaskEps), S(1) - static_cast<S>(kMaskEps));
        return upsample_factor > 1 ? upsample_nearest(y, upsample_factor) : y;
    }

    void collect(ParamList<S>& out, const std::string& prefix) const { conv.collect(out, prefix + ".conv"); }

    Shape cost(Shape in, const std::string& prefix, std::vector<LayerCost>& out) const {
        Shape y = conv.cost(in, prefix + ".conv", out);
        out.push_back({prefix + ".sigmoid", elem_flops(y, kFlopsPerElemSigmoid)});
        y.h *= upsample_factor;
        y.w *= upsample_factor;
        return y;
    }
};

// Deep-supervision tap: 1x1 conv -> sigmoid -> nearest upsample to the
// input resolution.
template <typename S>
struct AuxHead {
    Conv2dLayer<S> conv;
    int upsample_factor = 1;

    TensorPtr<S> forward(const TensorPtr<S>& x) const {
        auto y = clamp(sigmoid(conv.forward(x)), static_cast<S>(kMaskEps), S(1) - static_cast<S>(kMaskEps));
        return upsample_nearest(y, upsample_factor);
    }

    void collect(ParamList<S>& out, const std::string& prefix) const { conv.collect(out, prefix + ".conv"); }
};

}  // namespace smokenet
