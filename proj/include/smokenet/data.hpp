#pragma once

#include <array>
#include <random>
#include <utility>

#include "smokenet/image_io.hpp"
#include "smokenet/tensor.hpp"

namespace smokenet {

// CHW float raster in [0,1].
struct FloatImage {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<float> v;

    static FloatImage zero(int c, int h, int w) {
        FloatImage f;
        f.channels = c;
        f.height = h;
        f.width = w;
        f.v.assign(static_cast<std::size_t>(c) * h * w, 0.0f);
        return f;
    }
    float at(int c, int y, int x) const {
        return v[(static_cast<std::size_t>(c) * height + y) * width + x];
    }
    float& at(int c, int y, int x) {
        return v[(static_cast<std::size_t>(c) * height + y) * width + x];
    }
};

struct SampleRef {
    std::string id;
    std::string image_path;
    std::string mask_path;
    std::string split;  // train | val | test
};

struct Sample {
    FloatImage image;  // (3,H,W) in [0,1]
    FloatImage mask;   // (1,H,W) in {0,1}
    std::string id;
    std::vector<std::string> augmentation_log;
};

struct AugmentConfig {
    double p_hflip = 0.3;
    double p_vflip = 0.3;
    double p_rotate = 0.3;
    double rotate_range_deg = 15.0;
    double p_brightness = 0.3;
    double brightness_lo = 0.8;
    double brightness_hi = 1.2;
    struct Fog {
        double probability = 0.3;
        double density_lo = 0.1;
        double density_hi = 0.5;
        std::array<float, 3> color{0.9f, 0.9f, 0.9f};
    } fog;
    struct MotionBlur {
        double probability = 0.3;
        std::vector<int> lengths{3, 5, 7};
        double angle_lo = 0.0;
        double angle_hi = 180.0;
    } motion_blur;
    std::uint64_t seed = 0;

    void validate() const;
};

// --- manifest -------------------------------------------------------------

// Line-delimited JSON records: {"image_path":..., "mask_path":...,
// "split":..., "id":...?}. Paths are resolved relative to the manifest.
std::vector<SampleRef> load_manifest(const std::string& path);

// Decode + scale to [0,1]; mask binarized at 128; both resized (bilinear
// image, nearest mask) to target_h x target_w.
Sample load_sample(const SampleRef& ref, int target_h, int target_w);

// --- raster math ----------------------------------------------------------

FloatImage to_float(const ImageU8& img);
ImageU8 to_u8(const FloatImage& img);
FloatImage resize_bilinear(const FloatImage& img, int oh, int ow);
FloatImage resize_nearest(const FloatImage& img, int oh, int ow);
void hflip_inplace(FloatImage& img);
void vflip_inplace(FloatImage& img);
// Counterclockwise rotation about the raster center, same canvas, edge
// replication; bilinear or nearest resampling.
FloatImage rotate(const FloatImage& img, double angle_deg, bool bilinear);
void brightness_inplace(FloatImage& img, float factor);  // clamped to [0,1]
// out = (1-alpha) * image + alpha * fog_color
void apply_fog(FloatImage& img, float alpha, const std::array<float, 3>& color);
// Normalized line kernel of odd length at the given angle, replicate padding.
FloatImage apply_motion_blur(const FloatImage& img, int length, double angle_deg);

// Geometric transforms hit image and mask identically (nearest for the
// mask); photometric transforms hit the image only. Every applied transform
// is appended to the augmentation log. Deterministic given the rng state.
Sample augment(const Sample& in, const AugmentConfig& cfg, std::mt19937_64& rng);

// RNG stream for one (seed, epoch, sample) triple.
inline std::uint64_t sample_rng_seed(std::uint64_t seed, std::uint64_t epoch, const std::string& id) {
    return mix_seed(mix_seed(seed, epoch), hash_str(id));
}

// --- batching ---------------------------------------------------------------

// Deterministic Fisher-Yates shuffle into batches; the last partial batch is
// kept.
std::vector<std::vector<std::size_t>> batch_plan(std::size_t count, int batch_size,
                                                 std::uint64_t shuffle_seed);

template <typename S>
std::pair<TensorPtr<S>, TensorPtr<S>> stack_batch(const std::vector<const Sample*>& samples) {
    if (samples.empty()) {
        throw Error("stack_batch: empty batch");
    }
    const int C = samples[0]->image.channels;
    const int H = samples[0]->image.height;
    const int W = samples[0]->image.width;
    const std::int64_t B = static_cast<std::int64_t>(samples.size());
    auto images = make_tensor<S>({B, C, H, W});
    auto masks = make_tensor<S>({B, 1, H, W});
    for (std::int64_t b = 0; b < B; ++b) {
        const Sample& s = *samples[static_cast<std::size_t>(b)];
        if (s.image.channels != C || s.image.height != H || s.image.width != W) {
            throw ShapeError(format_msg("stack_batch: sample '", s.id, "' raster extents differ"));
        }
        for (std::size_t i = 0; i < s.image.v.size(); ++i) {
            images->data[static_cast<std::size_t>(b) * s.image.v.size() + i] = static_cast<S>(s.image.v[i]);
        }
        for (std::size_t i = 0; i < s.mask.v.size(); ++i) {
            masks->data[static_cast<std::size_t>(b) * s.mask.v.size() + i] = static_cast<S>(s.mask.v[i]);
        }
    }
    return {images, masks};
}

template <typename S>
std::vector<std::pair<TensorPtr<S>, TensorPtr<S>>> make_batches(const std::vector<Sample>& samples,
                                                                int batch_size,
                                                                std::uint64_t shuffle_seed) {
    if (samples.empty()) {
        throw Error("make_batches: empty dataset");
    }
    std::vector<std::pair<TensorPtr<S>, TensorPtr<S>>> out;
    for (const auto& idxs : batch_plan(samples.size(), batch_size, shuffle_seed)) {
        std::vector<const Sample*> ptrs;
        ptrs.reserve(idxs.size());
        for (std::size_t i : idxs) {
            ptrs.push_back(&samples[i]);
        }
        out.push_back(stack_batch<S>(ptrs));
    }
    return out;
}

}  // namespace smokenet
