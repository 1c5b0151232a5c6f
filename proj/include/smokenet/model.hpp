#pragma once

#include <map>
#include <memory>

#include "smokenet/blocks.hpp"

namespace smokenet {

// Declarative description of the network: six encoder stages with the given
// channel widths, kernel selections for the three multiscale stages, and the
// decoder/auxiliary-head layout.
struct ModelConfig {
    std::array<int, 6> filters{4, 8, 16, 32, 64, 128};
    std::array<StageKind, 6> encoder_blocks{StageKind::multiscale,  StageKind::multiscale,
                                            StageKind::multiscale,  StageKind::multiview,
                                            StageKind::multiview,   StageKind::multiview};
    std::array<KernelChoice, 3> selected_kernels{KernelChoice::k3x3, KernelChoice::k3x3, KernelChoice::k3x3};
    std::array<int, 3> dilations{2, 2, 2};
    int decoder_depth = 6;  // 6 or 3
    bool aux_heads = true;
    int in_channels = 3;
    int precision = 32;  // 32 or 64; informational, dispatch happens in the CLI

    void validate() const {
        int prev = 0;
        for (int f : filters) {
            if (f <= 0 || f % 4 != 0) {
                throw ConfigError(format_msg("model config: filter width ", f, " not divisible by 4"));
            }
            if (f <= prev) {
                throw ConfigError("model config: filter widths must be strictly increasing");
            }
            prev = f;
        }
        if (decoder_depth != 6 && decoder_depth != 3) {
            throw ConfigError(format_msg("model config: decoder_depth must be 6 or 3, got ", decoder_depth));
        }
        if (in_channels != 1 && in_channels != 3) {
            throw ConfigError(format_msg("model config: in_channels must be 1 or 3, got ", in_channels));
        }
        for (int d : dilations) {
            if (d < 1) {
                throw ConfigError(format_msg("model config: dilation rate ", d, " must be >= 1"));
            }
        }
        if (precision != 32 && precision != 64) {
            throw ConfigError(format_msg("model config: precision must be 32 or 64, got ", precision));
        }
    }
};

template <typename S>
struct ModelOutput {
    TensorPtr<S> mask;                                     // (N,1,H,W), values in (0,1)
    std::vector<std::pair<int, TensorPtr<S>>> aux_masks;   // (decoder stage, (N,1,H,W))
};

// The assembled network. Stage k of the encoder outputs filters[k-1]
// channels at 1/2^k resolution; a 1x1 stem maps the image to filters[0]
// channels first so every stage input splits into four chunks. Decoder
// stage k emits C'_k = filters[k-2] channels (filters[0] at stage 1).
template <typename S>
class SmokeNet {
public:
    SmokeNet(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        cfg.validate();
        std::mt19937_64 rng(seed);
        const auto& f = cfg.filters;
        shallowest_ = 7 - cfg.decoder_depth;

        stem_ = Conv2dLayer<S>(rng, cfg.in_channels, f[0], 1, 1);

        std::int64_t cin = f[0];
        for (int i = 0; i < 6; ++i) {
            const std::int64_t cout = f[static_cast<std::size_t>(i)];
            switch (cfg.encoder_blocks[static_cast<std::size_t>(i)]) {
                case StageKind::multiscale: {
                    MultiscaleStageSpec sp;
                    sp.in_channels = cin;
                    sp.out_channels = cout;
                    sp.selected_kernel = i < 3 ? cfg.selected_kernels[static_cast<std::size_t>(i)]
                                               : KernelChoice::k3x3;
                    sp.dilation_rate = i < 3 ? cfg.dilations[static_cast<std::size_t>(i)] : 2;
                    stages_.push_back(std::make_unique<MultiscaleStage<S>>(rng, sp));
                    break;
                }
                case StageKind::multiview:
                    stages_.push_back(std::make_unique<MultiviewStage<S>>(rng, MultiviewStageSpec{cin, cout}));
                    break;
                case StageKind::normal_conv:
                    stages_.push_back(std::make_unique<NormalConvStage<S>>(rng, cin, cout));
                    break;
                case StageKind::spatial_attention:
                    stages_.push_back(std::make_unique<SpatialAttentionStage<S>>(rng, cin, cout));
                    break;
            }
            cin = cout;
        }

        for (int k = shallowest_; k <= 5; ++k) {
            skip_ups_.emplace(k, TransposedConv2dLayer<S>::upsampler(rng, channels(k + 1), channels(k)));
        }
        for (int k = 6; k >= shallowest_; --k) {
            DecoderStage<S> d;
            if (k < 6) {
                d.up = TransposedConv2dLayer<S>::upsampler(rng, channels(k + 1), channels(k));
            }
            d.out_conv = TransposedConv2dLayer<S>::upsampler(rng, channels(k), out_channels(k));
            decoder_.emplace(k, std::move(d));
        }
        head_.conv = TransposedConv2dLayer<S>::same_size(rng, out_channels(shallowest_), 1);
        head_.upsample_factor = 1 << (shallowest_ - 1);
        if (cfg.aux_heads) {
            for (int k = shallowest_ + 1; k <= 6; ++k) {
                AuxHead<S> h;
                h.conv = Conv2dLayer<S>(rng, out_channels(k), 1, 1, 1);
                h.upsample_factor = 1 << (k - 1);
                aux_.emplace(k, std::move(h));
            }
        }
    }

    const ModelConfig& config() const { return cfg_; }

    // Encoder width at stage k (1-based).
    std::int64_t channels(int k) const { return cfg_.filters[static_cast<std::size_t>(k - 1)]; }
    // Decoder output width C'_k.
    std::int64_t out_channels(int k) const {
        return k >= 2 ? cfg_.filters[static_cast<std::size_t>(k - 2)] : cfg_.filters[0];
    }

    ModelOutput<S> forward(const TensorPtr<S>& x, Mode mode) {
        if (x->shape.c != cfg_.in_channels) {
            throw ShapeError(format_msg("forward: channel axis mismatch: input C=", x->shape.c,
                                        ", model expects ", cfg_.in_channels));
        }
        if (x->shape.h % 64 != 0 || x->shape.w % 64 != 0) {
            throw ShapeError(format_msg("forward: height/width axes must be divisible by 64, got ",
                                        x->shape.h, "x", x->shape.w));
        }

        std::array<TensorPtr<S>, 7> enc;  // 1-based
        TensorPtr<S> cur = stem_.forward(x);
        for (int k = 1; k <= 6; ++k) {
            cur = stages_[static_cast<std::size_t>(k - 1)]->forward(cur, mode);
            enc[static_cast<std::size_t>(k)] = cur;
        }

        std::array<TensorPtr<S>, 7> skip;
        skip[6] = enc[6];
        for (int k = 5; k >= shallowest_; --k) {
            skip[static_cast<std::size_t>(k)] =
                skip_pathway(enc[static_cast<std::size_t>(k)], skip[static_cast<std::size_t>(k + 1)],
                             skip_ups_.at(k));
        }

        ModelOutput<S> out;
        TensorPtr<S> lower_state;
        std::array<TensorPtr<S>, 7> stage_out;
        for (int k = 6; k >= shallowest_; --k) {
            auto res = decoder_.at(k).forward(skip[static_cast<std::size_t>(k)], lower_state);
            lower_state = res.state;
            stage_out[static_cast<std::size_t>(k)] = res.output;
        }
        out.mask = head_.forward(stage_out[static_cast<std::size_t>(shallowest_)]);
        for (auto& [k, h] : aux_) {
            out.aux_masks.emplace_back(k, h.forward(stage_out[static_cast<std::size_t>(k)]));
        }
        return out;
    }

    void collect(ParamList<S>& out) const {
        stem_.collect(out, "stem");
        for (int k = 1; k <= 6; ++k) {
            stages_[static_cast<std::size_t>(k - 1)]->collect(out, format_msg("enc", k));
        }
        for (const auto& [k, up] : skip_ups_) {
            up.collect(out, format_msg("skip_up", k));
        }
        for (const auto& [k, d] : decoder_) {
            if (d.up) {
                d.up->collect(out, format_msg("dec", k, ".up"));
            }
            d.out_conv.collect(out, format_msg("dec", k, ".out"));
        }
        head_.collect(out, "head");
        for (const auto& [k, h] : aux_) {
            h.collect(out, format_msg("aux.stage", k));
        }
    }

    // Inference-time parameter count; auxiliary heads are excluded unless
    // requested (they exist only to feed training losses).
    std::int64_t count_params(bool include_aux = false) const {
        ParamList<S> entries;
        collect(entries);
        std::int64_t total = 0;
        for (const auto& e : entries) {
            if (!e.learnable) {
                continue;
            }
            if (!include_aux && e.name.rfind("aux.", 0) == 0) {
                continue;
            }
            total += e.tensor->numel();
        }
        return total;
    }

    void zero_grad() {
        ParamList<S> entries;
        collect(entries);
        for (auto& e : entries) {
            if (e.learnable) {
                e.tensor->zero_grad();
            }
        }
    }

    // Analytic inference FLOPs mirroring forward(); aux heads excluded.
    std::uint64_t flops(Shape in, std::vector<LayerCost>* breakdown = nullptr) const {
        std::vector<LayerCost> local;
        std::vector<LayerCost>& out = breakdown ? *breakdown : local;
        std::array<Shape, 7> enc;
        Shape cur = stem_.cost(in, "stem", out);
        for (int k = 1; k <= 6; ++k) {
            cur = stages_[static_cast<std::size_t>(k - 1)]->cost(cur, format_msg("enc", k), out);
            enc[static_cast<std::size_t>(k)] = cur;
        }
        for (int k = 5; k >= shallowest_; --k) {
            skip_ups_.at(k).cost(enc[static_cast<std::size_t>(k + 1)], format_msg("skip_up", k), out);
            out.push_back({format_msg("skip_add", k),
                           elem_flops(enc[static_cast<std::size_t>(k)], kFlopsPerElemAdd)});
        }
        Shape head_in{};
        for (int k = 6; k >= shallowest_; --k) {
            const auto& d = decoder_.at(k);
            if (k < 6) {
                d.up->cost(enc[static_cast<std::size_t>(k + 1)], format_msg("dec", k, ".up"), out);
                out.push_back({format_msg("dec", k, ".add"),
                               elem_flops(enc[static_cast<std::size_t>(k)], kFlopsPerElemAdd)});
            }
            const Shape o = d.out_conv.cost(enc[static_cast<std::size_t>(k)], format_msg("dec", k, ".out"), out);
            if (k == shallowest_) {
                head_in = o;
            }
        }
        head_.cost(head_in, "head", out);
        std::uint64_t total = 0;
        for (const auto& c : out) {
            total += c.flops;
        }
        return total;
    }

    Conv2dLayer<S>& stem() { return stem_; }
    EncoderStage<S>& stage(int k) { return *stages_[static_cast<std::size_t>(k - 1)]; }
    TransposedConv2dLayer<S>& skip_up(int k) { return skip_ups_.at(k); }
    DecoderStage<S>& decoder_stage(int k) { return decoder_.at(k); }
    SegmentationHead<S>& head() { return head_; }
    int shallowest_stage() const { return shallowest_; }

private:
    ModelConfig cfg_;
    int shallowest_ = 1;
    Conv2dLayer<S> stem_;
    std::vector<std::unique_ptr<EncoderStage<S>>> stages_;
    std::map<int, TransposedConv2dLayer<S>> skip_ups_;  // k in [shallowest, 5]
    std::map<int, DecoderStage<S>> decoder_;            // k in [shallowest, 6]
    SegmentationHead<S> head_;
    std::map<int, AuxHead<S>> aux_;                     // k in [shallowest+1, 6]
};

}  // namespace smokenet
