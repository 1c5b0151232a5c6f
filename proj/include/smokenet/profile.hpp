#pragma once

#include "smokenet/metrics.hpp"

namespace smokenet {

// The eight module-combination variants: Conv in {normal, multiscale},
// Loss in {final-only, layer-wise}, Attention in {spatial-only, multiview}.
// Loss choice never changes the built network, so paired rows share one
// parameter/FLOP figure (auxiliary heads are excluded from both counts).
struct ProfileRow {
    std::string model;      // M1..M8
    char conv = 'N';        // N | M
    char loss = 'F';        // F | L
    std::string attention;  // NA | MA
    std::int64_t params = 0;
    std::uint64_t flops = 0;
    std::uint64_t conv_flops = 0;
};

inline ModelConfig variant_config(bool multiscale_conv, bool multiview_attention) {
    ModelConfig cfg;
    const StageKind conv_kind = multiscale_conv ? StageKind::multiscale : StageKind::normal_conv;
    const StageKind attn_kind = multiview_attention ? StageKind::multiview : StageKind::spatial_attention;
    cfg.encoder_blocks = {conv_kind, conv_kind, conv_kind, attn_kind, attn_kind, attn_kind};
    return cfg;
}

inline std::vector<ProfileRow> profile_variants(int image_size,
                                                std::vector<LayerCost>* default_breakdown = nullptr) {
    std::vector<ProfileRow> rows;
    for (int i = 0; i < 8; ++i) {
        const bool multiscale_conv = i >= 4;
        const bool multiview_attention = (i == 2 || i == 3 || i == 6 || i == 7);
        const bool layer_loss = (i % 2) == 1;
        const ModelConfig cfg = variant_config(multiscale_conv, multiview_attention);
        SmokeNet<float> model(cfg, 0);
        std::vector<LayerCost> breakdown;
        ProfileRow row;
        row.model = format_msg("M", i + 1);
        row.conv = multiscale_conv ? 'M' : 'N';
        row.loss = layer_loss ? 'L' : 'F';
        row.attention = multiview_attention ? "MA" : "NA";
        row.params = model.count_params(false);
        row.flops = model.flops({1, cfg.in_channels, image_size, image_size}, &breakdown);
        for (const auto& c : breakdown) {
            if (c.conv) {
                row.conv_flops += c.flops;
            }
        }
        if (i == 7 && default_breakdown) {
            *default_breakdown = std::move(breakdown);
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace smokenet
