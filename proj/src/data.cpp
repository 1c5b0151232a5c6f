#include "smokenet/data.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

namespace smokenet {

namespace fs = std::filesystem;
using nlohmann::json;

void AugmentConfig::validate() const {
    for (double p : {p_hflip, p_vflip, p_rotate, p_brightness, fog.probability, motion_blur.probability}) {
        if (p < 0.0 || p > 1.0) {
            throw ConfigError(format_msg("augment config: probability ", p, " outside [0,1]"));
        }
    }
    if (fog.density_lo < 0.0 || fog.density_hi > 1.0 || fog.density_lo > fog.density_hi) {
        throw ConfigError("augment config: fog density range must be within [0,1]");
    }
    if (brightness_lo <= 0.0 || brightness_lo > brightness_hi) {
        throw ConfigError("augment config: invalid brightness range");
    }
    for (int l : motion_blur.lengths) {
        if (l < 1 || l % 2 == 0) {
            throw ConfigError(format_msg("augment config: blur length ", l, " must be odd and >= 1"));
        }
    }
}

std::vector<SampleRef> load_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) {
        throw IoError(format_msg("cannot open manifest '", path, "'"));
    }
    const fs::path base = fs::path(path).parent_path();
    std::vector<SampleRef> refs;
    std::set<std::string> seen_ids;
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw IoError(format_msg("manifest '", path, "' line ", line_no, ": malformed record: ", e.what()));
        }
        SampleRef ref;
        for (const char* key : {"image_path", "mask_path"}) {
            if (!rec.contains(key) || !rec[key].is_string()) {
                throw IoError(format_msg("manifest '", path, "' line ", line_no, ": missing ", key));
            }
        }
        auto resolve = [&base](const std::string& p) {
            fs::path fp(p);
            return fp.is_absolute() ? fp.string() : (base / fp).string();
        };
        ref.image_path = resolve(rec["image_path"].get<std::string>());
        ref.mask_path = resolve(rec["mask_path"].get<std::string>());
        ref.split = rec.value("split", std::string("train"));
        ref.id = rec.value("id", fs::path(rec["image_path"].get<std::string>()).stem().string());
        for (const auto& [role, p] : {std::pair<const char*, const std::string&>{"image", ref.image_path},
                                      {"mask", ref.mask_path}}) {
            if (!fs::exists(p)) {
                throw IoError(format_msg("manifest '", path, "' line ", line_no, ": ", role, " path '", p,
                                         "' does not exist"));
            }
        }
        if (!seen_ids.insert(ref.id).second) {
            warn(format_msg("manifest '", path, "' line ", line_no, ": duplicate id '", ref.id,
                            "'; keeping both records"));
        }
        refs.push_back(std::move(ref));
    }
    return refs;
}

FloatImage to_float(const ImageU8& img) {
    FloatImage f = FloatImage::zero(img.channels, img.height, img.width);
    for (int c = 0; c < img.channels; ++c) {
        for (int y = 0; y < img.height; ++y) {
            for (int x = 0; x < img.width; ++x) {
                f.at(c, y, x) = static_cast<float>(img.at(y, x, c)) / 255.0f;
            }
        }
    }
    return f;
}

ImageU8 to_u8(const FloatImage& img) {
    ImageU8 u;
    u.width = img.width;
    u.height = img.height;
    u.channels = img.channels;
    u.pixels.resize(static_cast<std::size_t>(img.width) * img.height * img.channels);
    for (int c = 0; c < img.channels; ++c) {
        for (int y = 0; y < img.height; ++y) {
            for (int x = 0; x < img.width; ++x) {
                const float v = std::min(1.0f, std::max(0.0f, img.at(c, y, x)));
                u.at(y, x, c) = static_cast<std::uint8_t>(std::lround(v * 255.0f));
            }
        }
    }
    return u;
}

FloatImage resize_bilinear(const FloatImage& img, int oh, int ow) {
    if (oh == img.height && ow == img.width) {
        return img;
    }
    FloatImage out = FloatImage::zero(img.channels, oh, ow);
    const double sy = static_cast<double>(img.height) / oh;
    const double sx = static_cast<double>(img.width) / ow;
    for (int y = 0; y < oh; ++y) {
        // Pixel-center alignment, clamped to the source extent.
        const double fy = std::max(0.0, std::min((y + 0.5) * sy - 0.5, static_cast<double>(img.height - 1)));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, img.height - 1);
        const double wy = fy - y0;
        for (int x = 0; x < ow; ++x) {
            const double fx = std::max(0.0, std::min((x + 0.5) * sx - 0.5, static_cast<double>(img.width - 1)));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, img.width - 1);
            const double wx = fx - x0;
            for (int c = 0; c < img.channels; ++c) {
                const double v = (1 - wy) * ((1 - wx) * img.at(c, y0, x0) + wx * img.at(c, y0, x1)) +
                                 wy * ((1 - wx) * img.at(c, y1, x0) + wx * img.at(c, y1, x1));
                out.at(c, y, x) = static_cast<float>(v);
            }
        }
    }
    return out;
}

FloatImage resize_nearest(const FloatImage& img, int oh, int ow) {
    if (oh == img.height && ow == img.width) {
        return img;
    }
    FloatImage out = FloatImage::zero(img.channels, oh, ow);
    const double sy = static_cast<double>(img.height) / oh;
    const double sx = static_cast<double>(img.width) / ow;
    for (int y = 0; y < oh; ++y) {
        const int yi = std::min(static_cast<int>((y + 0.5) * sy), img.height - 1);
        for (int x = 0; x < ow; ++x) {
            const int xi = std::min(static_cast<int>((x + 0.5) * sx), img.width - 1);
            for (int c = 0; c < img.channels; ++c) {
                out.at(c, y, x) = img.at(c, yi, xi);
            }
        }
    }
    return out;
}

Sample load_sample(const SampleRef& ref, int target_h, int target_w) {
    const ImageU8 raw_img = read_image(ref.image_path, 3);
    const ImageU8 raw_mask = read_image(ref.mask_path, 1);
    if (raw_img.width != raw_mask.width || raw_img.height != raw_mask.height) {
        throw IoError(format_msg("sample '", ref.id, "': image ", raw_img.width, "x", raw_img.height,
                                 " and mask ", raw_mask.width, "x", raw_mask.height,
                                 " extents differ before resize"));
    }
    Sample s;
    s.id = ref.id;
    s.image = resize_bilinear(to_float(raw_img), target_h, target_w);
    FloatImage mask = FloatImage::zero(1, raw_mask.height, raw_mask.width);
    for (int y = 0; y < raw_mask.height; ++y) {
        for (int x = 0; x < raw_mask.width; ++x) {
            mask.at(0, y, x) = raw_mask.at(y, x, 0) >= 128 ? 1.0f : 0.0f;
        }
    }
    s.mask = resize_nearest(mask, target_h, target_w);
    return s;
}

void hflip_inplace(FloatImage& img) {
    for (int c = 0; c < img.channels; ++c) {
        for (int y = 0; y < img.height; ++y) {
            for (int x = 0; x < img.width / 2; ++x) {
                std::swap(img.at(c, y, x), img.at(c, y, img.width - 1 - x));
            }
        }
    }
}

void vflip_inplace(FloatImage& img) {
    for (int c = 0; c < img.channels; ++c) {
        for (int y = 0; y < img.height / 2; ++y) {
            for (int x = 0; x < img.width; ++x) {
                std::swap(img.at(c, y, x), img.at(c, img.height - 1 - y, x));
            }
        }
    }
}

FloatImage rotate(const FloatImage& img, double angle_deg, bool bilinear) {
    const double rad = angle_deg * M_PI / 180.0;
    const double cs = std::cos(rad), sn = std::sin(rad);
    const double cy = (img.height - 1) / 2.0, cx = (img.width - 1) / 2.0;
    FloatImage out = FloatImage::zero(img.channels, img.height, img.width);
    auto clampi = [](double v, int hi) { return std::min(std::max(0, static_cast<int>(std::lround(v))), hi); };
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const double dx = x - cx, dy = y - cy;
            // Inverse map of a counterclockwise content rotation.
            const double sx = cx + dx * cs + dy * sn;
            const double sy = cy - dx * sn + dy * cs;
            if (bilinear) {
                const double fx = std::min(std::max(sx, 0.0), static_cast<double>(img.width - 1));
                const double fy = std::min(std::max(sy, 0.0), static_cast<double>(img.height - 1));
                const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
                const int x1 = std::min(x0 + 1, img.width - 1), y1 = std::min(y0 + 1, img.height - 1);
                const double wx = fx - x0, wy = fy - y0;
                for (int c = 0; c < img.channels; ++c) {
                    const double v = (1 - wy) * ((1 - wx) * img.at(c, y0, x0) + wx * img.at(c, y0, x1)) +
                                     wy * ((1 - wx) * img.at(c, y1, x0) + wx * img.at(c, y1, x1));
                    out.at(c, y, x) = static_cast<float>(v);
                }
            } else {
                const int xi = clampi(sx, img.width - 1);
                const int yi = clampi(sy, img.height - 1);
                for (int c = 0; c < img.channels; ++c) {
                    out.at(c, y, x) = img.at(c, yi, xi);
                }
            }
        }
    }
    return out;
}

void brightness_inplace(FloatImage& img, float factor) {
    for (auto& v : img.v) {
        v = std::min(1.0f, std::max(0.0f, v * factor));
    }
}

void apply_fog(FloatImage& img, float alpha, const std::array<float, 3>& color) {
    for (int c = 0; c < img.channels; ++c) {
        const float fc = color[static_cast<std::size_t>(std::min(c, 2))];
        for (int y = 0; y < img.height; ++y) {
            for (int x = 0; x < img.width; ++x) {
                img.at(c, y, x) = (1.0f - alpha) * img.at(c, y, x) + alpha * fc;
            }
        }
    }
}

FloatImage apply_motion_blur(const FloatImage& img, int length, double angle_deg) {
    if (length < 1 || length % 2 == 0) {
        throw ConfigError(format_msg("motion blur length must be odd and >= 1, got ", length));
    }
    if (length == 1) {
        return img;
    }
    const double rad = angle_deg * M_PI / 180.0;
    const double cs = std::cos(rad), sn = std::sin(rad);
    struct Tap {
        int dy, dx;
    };
    std::vector<Tap> taps;
    for (int i = 0; i < length; ++i) {
        const double t = i - (length - 1) / 2.0;
        taps.push_back({static_cast<int>(std::lround(-t * sn)), static_cast<int>(std::lround(t * cs))});
    }
    const float weight = 1.0f / static_cast<float>(taps.size());
    FloatImage out = FloatImage::zero(img.channels, img.height, img.width);
    for (int c = 0; c < img.channels; ++c) {
        for (int y = 0; y < img.height; ++y) {
            for (int x = 0; x < img.width; ++x) {
                float acc = 0.0f;
                for (const Tap& t : taps) {
                    const int yy = std::min(std::max(0, y + t.dy), img.height - 1);
                    const int xx = std::min(std::max(0, x + t.dx), img.width - 1);
                    acc += img.at(c, yy, xx);
                }
                out.at(c, y, x) = acc * weight;
            }
        }
    }
    return out;
}

Sample augment(const Sample& in, const AugmentConfig& cfg, std::mt19937_64& rng) {
    cfg.validate();
    Sample s = in;
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    if (unit(rng) < cfg.p_hflip) {
        hflip_inplace(s.image);
        hflip_inplace(s.mask);
        s.augmentation_log.push_back("hflip");
    }
    if (unit(rng) < cfg.p_vflip) {
        vflip_inplace(s.image);
        vflip_inplace(s.mask);
        s.augmentation_log.push_back("vflip");
    }
    if (unit(rng) < cfg.p_rotate) {
        std::uniform_real_distribution<double> ang(-cfg.rotate_range_deg, cfg.rotate_range_deg);
        const double a = ang(rng);
        s.image = rotate(s.image, a, true);
        s.mask = rotate(s.mask, a, false);
        s.augmentation_log.push_back(format_msg("rotate:", a));
    }
    if (unit(rng) < cfg.p_brightness) {
        std::uniform_real_distribution<double> f(cfg.brightness_lo, cfg.brightness_hi);
        const double factor = f(rng);
        brightness_inplace(s.image, static_cast<float>(factor));
        s.augmentation_log.push_back(format_msg("brightness:", factor));
    }
    if (unit(rng) < cfg.fog.probability) {
        std::uniform_real_distribution<double> d(cfg.fog.density_lo, cfg.fog.density_hi);
        const double density = d(rng);
        apply_fog(s.image, static_cast<float>(density), cfg.fog.color);
        s.augmentation_log.push_back(format_msg("fog:", density));
    }
    if (unit(rng) < cfg.motion_blur.probability) {
        std::uniform_int_distribution<std::size_t> pick(0, cfg.motion_blur.lengths.size() - 1);
        const int length = cfg.motion_blur.lengths[pick(rng)];
        std::uniform_real_distribution<double> ang(cfg.motion_blur.angle_lo, cfg.motion_blur.angle_hi);
        const double angle = ang(rng);
        s.image = apply_motion_blur(s.image, length, angle);
        s.augmentation_log.push_back(format_msg("motion_blur:", length, ":", angle));
    }
    return s;
}

std::vector<std::vector<std::size_t>> batch_plan(std::size_t count, int batch_size,
                                                 std::uint64_t shuffle_seed) {
    if (batch_size < 1) {
        throw ConfigError(format_msg("batch_plan: batch_size must be >= 1, got ", batch_size));
    }
    if (count == 0) {
        throw Error("batch_plan: empty dataset");
    }
    std::vector<std::size_t> order(count);
    for (std::size_t i = 0; i < count; ++i) {
        order[i] = i;
    }
    std::mt19937_64 rng(shuffle_seed);
    for (std::size_t i = count; i > 1; --i) {
        std::uniform_int_distribution<std::size_t> d(0, i - 1);
        std::swap(order[i - 1], order[d(rng)]);
    }
    std::vector<std::vector<std::size_t>> plan;
    for (std::size_t i = 0; i < count; i += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(count, i + static_cast<std::size_t>(batch_size));
        plan.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                          order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return plan;
}

}  // namespace smokenet
