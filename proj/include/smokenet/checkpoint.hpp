#pragma once

#include <cstring>
#include <fstream>
#include <map>
#include <memory>

#include <json.hpp>

#include "smokenet/model.hpp"
#include "smokenet/optim.hpp"

namespace smokenet {

// Checkpoint layout (all integers little-endian):
//   magic "SMOKENET" | u32 version | u32 precision bits | u64 manifest size |
//   manifest JSON | blob
// Every tensor in the blob is a 4 x u32 shape header followed by its values
// as IEEE-754 at the stated precision; the manifest maps names to offsets
// (relative to the blob start).

inline constexpr char kCheckpointMagic[8] = {'S', 'M', 'O', 'K', 'E', 'N', 'E', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
    int epoch = -1;
    double best_metric = -1.0;
    std::uint64_t seed = 0;
};

inline nlohmann::json config_to_json(const ModelConfig& cfg) {
    nlohmann::json j;
    j["filters"] = cfg.filters;
    std::vector<std::string> blocks;
    for (StageKind k : cfg.encoder_blocks) {
        blocks.push_back(to_string(k));
    }
    j["encoder_blocks"] = blocks;
    std::vector<std::string> kernels;
    for (KernelChoice k : cfg.selected_kernels) {
        kernels.push_back(to_string(k));
    }
    j["selected_kernels"] = kernels;
    j["dilations"] = cfg.dilations;
    j["decoder_depth"] = cfg.decoder_depth;
    j["aux_heads"] = cfg.aux_heads;
    j["in_channels"] = cfg.in_channels;
    j["precision"] = cfg.precision;
    return j;
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    if (j.contains("filters")) {
        const auto f = j["filters"].get<std::vector<int>>();
        if (f.size() != 6) {
            throw ConfigError("model config: filters must have 6 entries");
        }
        std::copy(f.begin(), f.end(), cfg.filters.begin());
    }
    if (j.contains("encoder_blocks")) {
        const auto b = j["encoder_blocks"].get<std::vector<std::string>>();
        if (b.size() != 6) {
            throw ConfigError("model config: encoder_blocks must have 6 entries");
        }
        for (std::size_t i = 0; i < 6; ++i) {
            cfg.encoder_blocks[i] = parse_stage_kind(b[i]);
        }
    }
    if (j.contains("selected_kernels")) {
        const auto k = j["selected_kernels"].get<std::vector<std::string>>();
        if (k.size() != 3) {
            throw ConfigError("model config: selected_kernels must have 3 entries");
        }
        for (std::size_t i = 0; i < 3; ++i) {
            cfg.selected_kernels[i] = parse_kernel_choice(k[i]);
        }
    }
    if (j.contains("dilations")) {
        const auto d = j["dilations"].get<std::vector<int>>();
        if (d.size() != 3) {
            throw ConfigError("model config: dilations must have 3 entries");
        }
        std::copy(d.begin(), d.end(), cfg.dilations.begin());
    }
    cfg.decoder_depth = j.value("decoder_depth", cfg.decoder_depth);
    cfg.aux_heads = j.value("aux_heads", cfg.aux_heads);
    cfg.in_channels = j.value("in_channels", cfg.in_channels);
    cfg.precision = j.value("precision", cfg.precision);
    cfg.validate();
    return cfg;
}

namespace detail {

template <typename S>
void append_tensor_blob(std::string& blob, const Shape& shape, const std::vector<S>& values) {
    const std::uint32_t dims[4] = {static_cast<std::uint32_t>(shape.n), static_cast<std::uint32_t>(shape.c),
                                   static_cast<std::uint32_t>(shape.h), static_cast<std::uint32_t>(shape.w)};
    blob.append(reinterpret_cast<const char*>(dims), sizeof(dims));
    blob.append(reinterpret_cast<const char*>(values.data()), values.size() * sizeof(S));
}

struct BlobReader {
    const std::string& blob;

    Shape read_shape(std::uint64_t offset) const {
        if (offset + 16 > blob.size()) {
            throw CheckpointError("checkpoint truncated while reading shape header");
        }
        std::uint32_t dims[4];
        std::memcpy(dims, blob.data() + offset, sizeof(dims));
        return {dims[0], dims[1], dims[2], dims[3]};
    }

    template <typename S>
    std::vector<S> read_values(std::uint64_t offset, std::int64_t count, int precision_bits) const {
        const std::size_t elem = precision_bits == 64 ? 8 : 4;
        const std::uint64_t start = offset + 16;
        if (start + static_cast<std::uint64_t>(count) * elem > blob.size()) {
            throw CheckpointError("checkpoint truncated while reading tensor values");
        }
        std::vector<S> out(static_cast<std::size_t>(count));
        if (precision_bits == 64) {
            std::vector<double> tmp(static_cast<std::size_t>(count));
            std::memcpy(tmp.data(), blob.data() + start, tmp.size() * 8);
            for (std::size_t i = 0; i < tmp.size(); ++i) {
                out[i] = static_cast<S>(tmp[i]);
            }
        } else {
            std::vector<float> tmp(static_cast<std::size_t>(count));
            std::memcpy(tmp.data(), blob.data() + start, tmp.size() * 4);
            for (std::size_t i = 0; i < tmp.size(); ++i) {
                out[i] = static_cast<S>(tmp[i]);
            }
        }
        return out;
    }
};

}  // namespace detail

template <typename S>
void save_checkpoint(const std::string& path, const SmokeNet<S>& model, const AdamW<S>* optimizer,
                     const CheckpointMeta& meta) {
    ParamList<S> entries;
    model.collect(entries);

    nlohmann::json manifest;
    manifest["config"] = config_to_json(model.config());
    manifest["epoch"] = meta.epoch;
    manifest["best_metric"] = meta.best_metric;
    manifest["seed"] = meta.seed;

    std::string blob;
    nlohmann::json jentries = nlohmann::json::array();
    for (const auto& e : entries) {
        nlohmann::json je;
        je["name"] = e.name;
        je["learnable"] = e.learnable;
        je["offset"] = blob.size();
        detail::append_tensor_blob(blob, e.tensor->shape, e.tensor->data);
        jentries.push_back(std::move(je));
    }
    manifest["entries"] = std::move(jentries);

    if (optimizer) {
        nlohmann::json jopt;
        jopt["step"] = optimizer->step_count();
        nlohmann::json jslots = nlohmann::json::array();
        const auto& params = optimizer->params();
        const auto& slots = optimizer->slots();
        for (std::size_t i = 0; i < params.size(); ++i) {
            nlohmann::json js;
            js["name"] = params[i].name;
            js["m_offset"] = blob.size();
            detail::append_tensor_blob(blob, params[i].tensor->shape, slots[i].m);
            js["v_offset"] = blob.size();
            detail::append_tensor_blob(blob, params[i].tensor->shape, slots[i].v);
            jslots.push_back(std::move(js));
        }
        jopt["entries"] = std::move(jslots);
        manifest["optimizer"] = std::move(jopt);
    } else {
        manifest["optimizer"] = nullptr;
    }

    const std::string mtext = manifest.dump();
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        throw IoError(format_msg("cannot open checkpoint '", path, "' for writing"));
    }
    f.write(kCheckpointMagic, 8);
    const std::uint32_t version = kCheckpointVersion;
    const std::uint32_t bits = sizeof(S) * 8;
    const std::uint64_t mlen = mtext.size();
    f.write(reinterpret_cast<const char*>(&version), 4);
    f.write(reinterpret_cast<const char*>(&bits), 4);
    f.write(reinterpret_cast<const char*>(&mlen), 8);
    f.write(mtext.data(), static_cast<std::streamsize>(mtext.size()));
    f.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!f) {
        throw IoError(format_msg("failed while writing checkpoint '", path, "'"));
    }
}

template <typename S>
struct LoadedCheckpoint {
    std::unique_ptr<SmokeNet<S>> model;
    CheckpointMeta meta;
    bool has_optimizer = false;
    std::int64_t optimizer_step = 0;
    std::map<std::string, std::pair<std::vector<S>, std::vector<S>>> optimizer_slots;  // name -> (m, v)
};

template <typename S>
LoadedCheckpoint<S> load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw IoError(format_msg("cannot open checkpoint '", path, "'"));
    }
    std::string raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (raw.size() < 24 || std::memcmp(raw.data(), kCheckpointMagic, 8) != 0) {
        throw CheckpointError(format_msg("'", path, "' is not a checkpoint (bad magic)"));
    }
    std::uint32_t version = 0, bits = 0;
    std::uint64_t mlen = 0;
    std::memcpy(&version, raw.data() + 8, 4);
    std::memcpy(&bits, raw.data() + 12, 4);
    std::memcpy(&mlen, raw.data() + 16, 8);
    if (version != kCheckpointVersion) {
        throw CheckpointError(format_msg("unsupported checkpoint version ", version));
    }
    if (bits != 32 && bits != 64) {
        throw CheckpointError(format_msg("unsupported checkpoint precision ", bits));
    }
    if (24 + mlen > raw.size()) {
        throw CheckpointError("checkpoint truncated inside manifest");
    }
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(raw.substr(24, mlen));
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(format_msg("corrupt checkpoint manifest: ", e.what()));
    }
    if (bits != sizeof(S) * 8) {
        warn(format_msg("checkpoint '", path, "' stores ", bits, "-bit values; converting to ",
                        sizeof(S) * 8, "-bit"));
    }

    const std::string blob = raw.substr(24 + mlen);
    detail::BlobReader reader{blob};

    LoadedCheckpoint<S> out;
    const ModelConfig cfg = config_from_json(manifest.at("config"));
    out.meta.epoch = manifest.value("epoch", -1);
    out.meta.best_metric = manifest.value("best_metric", -1.0);
    out.meta.seed = manifest.value("seed", 0ull);
    out.model = std::make_unique<SmokeNet<S>>(cfg, out.meta.seed);

    ParamList<S> entries;
    out.model->collect(entries);
    std::map<std::string, TensorPtr<S>> by_name;
    for (auto& e : entries) {
        by_name[e.name] = e.tensor;
    }

    std::size_t loaded = 0;
    for (const auto& je : manifest.at("entries")) {
        const std::string name = je.at("name").get<std::string>();
        const auto it = by_name.find(name);
        if (it == by_name.end()) {
            throw CheckpointError(format_msg("checkpoint entry '", name, "' has no matching tensor"));
        }
        const std::uint64_t offset = je.at("offset").get<std::uint64_t>();
        const Shape stored = reader.read_shape(offset);
        if (!(stored == it->second->shape)) {
            throw CheckpointError(format_msg("checkpoint entry '", name, "' shape ", stored.str(),
                                             " does not match model shape ", it->second->shape.str()));
        }
        it->second->data = reader.read_values<S>(offset, stored.numel(), static_cast<int>(bits));
        ++loaded;
    }
    if (loaded != by_name.size()) {
        throw CheckpointError(format_msg("checkpoint provides ", loaded, " tensors, model needs ",
                                         by_name.size()));
    }

    if (!manifest.at("optimizer").is_null()) {
        out.has_optimizer = true;
        const auto& jopt = manifest.at("optimizer");
        out.optimizer_step = jopt.at("step").get<std::int64_t>();
        for (const auto& js : jopt.at("entries")) {
            const std::string name = js.at("name").get<std::string>();
            const auto it = by_name.find(name);
            if (it == by_name.end()) {
                throw CheckpointError(format_msg("optimizer entry '", name, "' has no matching tensor"));
            }
            const std::int64_t count = it->second->numel();
            auto m = reader.read_values<S>(js.at("m_offset").get<std::uint64_t>(), count,
                                           static_cast<int>(bits));
            auto v = reader.read_values<S>(js.at("v_offset").get<std::uint64_t>(), count,
                                           static_cast<int>(bits));
            out.optimizer_slots[name] = {std::move(m), std::move(v)};
        }
    }
    return out;
}

// Rehydrate an optimizer built over the same parameter list.
template <typename S>
void restore_optimizer(AdamW<S>& opt, const LoadedCheckpoint<S>& ckpt) {
    if (!ckpt.has_optimizer) {
        throw CheckpointError("checkpoint has no optimizer state to restore");
    }
    opt.set_step_count(ckpt.optimizer_step);
    const auto& params = opt.params();
    auto& slots = opt.slots();
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto it = ckpt.optimizer_slots.find(params[i].name);
        if (it == ckpt.optimizer_slots.end()) {
            throw CheckpointError(format_msg("optimizer state for '", params[i].name, "' missing"));
        }
        slots[i].m = it->second.first;
        slots[i].v = it->second.second;
    }
}

}  // namespace smokenet
