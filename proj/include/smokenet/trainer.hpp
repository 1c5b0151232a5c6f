#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "smokenet/checkpoint.hpp"
#include "smokenet/data.hpp"
#include "smokenet/losses.hpp"
#include "smokenet/metrics.hpp"
#include "smokenet/optim.hpp"

namespace smokenet {

struct TrainOptions {
    ModelConfig model;
    LossConfig loss;
    ScheduleConfig schedule;
    AugmentConfig augment;
    bool augment_enabled = true;
    std::string manifest;
    std::string out_dir;
    std::string resume;  // checkpoint path; empty = fresh run
    int epochs = 100;
    int batch_size = 8;
    int image_size = 256;
    std::uint64_t seed = 0;
    double learning_rate_override = -1;  // <0: use the cosine schedule
    double weight_decay = 1e-5;
    std::int64_t max_steps = -1;  // optional cap on optimizer steps
};

struct EpochRecord {
    int epoch = 0;
    double lr = 0;
    double train_loss = 0;
    double train_miou = 0;
    double val_miou = -1;  // -1 when no val split exists
    std::int64_t steps = 0;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    std::string last_checkpoint;
    std::string best_checkpoint;
    double best_miou = -1;
    std::int64_t total_steps = 0;
};

// Mean two-class mIoU of eval-mode predictions over (unaugmented) samples.
template <typename S>
double evaluate_miou(SmokeNet<S>& model, const std::vector<Sample>& samples, int batch_size) {
    double acc = 0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < samples.size(); i += static_cast<std::size_t>(batch_size)) {
        std::vector<const Sample*> ptrs;
        for (std::size_t j = i; j < std::min(samples.size(), i + static_cast<std::size_t>(batch_size)); ++j) {
            ptrs.push_back(&samples[j]);
        }
        auto [images, masks] = stack_batch<S>(ptrs);
        auto out = model.forward(images, Mode::eval);
        for (double v : per_image_iou(out.mask, masks)) {
            acc += v;
            ++count;
        }
    }
    return count == 0 ? -1.0 : acc / static_cast<double>(count);
}

// Full training loop: deterministic under (seed, epoch, sample-id) derived
// RNG streams, resumable from any epoch checkpoint bit-exactly.
template <typename S>
TrainResult train_run(const TrainOptions& opt, std::ostream* console = &std::cout) {
    namespace fs = std::filesystem;
    opt.model.validate();
    opt.loss.validate();
    opt.schedule.validate();
    opt.augment.validate();
    if (opt.epochs < 1) {
        throw ConfigError("train: epochs must be >= 1");
    }
    if (opt.epochs - 1 > opt.schedule.total_epochs) {
        throw ConfigError(format_msg("train: epochs=", opt.epochs, " exceeds the schedule horizon T=",
                                     opt.schedule.total_epochs));
    }

    auto refs = load_manifest(opt.manifest);
    std::vector<SampleRef> train_refs, val_refs;
    for (auto& r : refs) {
        if (r.split == "train") {
            train_refs.push_back(r);
        } else if (r.split == "val") {
            val_refs.push_back(r);
        }
    }
    if (train_refs.empty()) {
        throw Error(format_msg("train: dataset empty: no records with split=train in '", opt.manifest, "'"));
    }

    fs::create_directories(opt.out_dir);
    const std::string log_path = (fs::path(opt.out_dir) / "train_log.jsonl").string();
    std::ofstream log(log_path, opt.resume.empty() ? std::ios::trunc : std::ios::app);
    if (!log) {
        throw IoError(format_msg("train: output directory '", opt.out_dir, "' is not writable"));
    }

    std::vector<Sample> train_base, val_base;
    for (const auto& r : train_refs) {
        train_base.push_back(load_sample(r, opt.image_size, opt.image_size));
    }
    for (const auto& r : val_refs) {
        val_base.push_back(load_sample(r, opt.image_size, opt.image_size));
    }

    std::unique_ptr<SmokeNet<S>> model;
    int epoch_start = 0;
    double best_metric = -1;
    std::int64_t opt_step_restore = -1;
    LoadedCheckpoint<S> resumed;
    if (!opt.resume.empty()) {
        resumed = load_checkpoint<S>(opt.resume);
        model = std::move(resumed.model);
        epoch_start = resumed.meta.epoch + 1;
        best_metric = resumed.meta.best_metric;
        if (resumed.has_optimizer) {
            opt_step_restore = resumed.optimizer_step;
        }
    } else {
        model = std::make_unique<SmokeNet<S>>(opt.model, opt.seed);
    }

    ParamList<S> entries;
    model->collect(entries);
    AdamW<S> optimizer(entries, opt.weight_decay);
    if (opt_step_restore >= 0) {
        restore_optimizer(optimizer, resumed);
    }

    TrainResult result;
    result.best_miou = best_metric;
    result.total_steps = optimizer.step_count();
    const std::string last_path = (fs::path(opt.out_dir) / "last.ckpt").string();
    const std::string best_path = (fs::path(opt.out_dir) / "best.ckpt").string();

    bool stop = false;
    for (int epoch = epoch_start; epoch < opt.epochs && !stop; ++epoch) {
        const double lr = opt.learning_rate_override >= 0 ? opt.learning_rate_override
                                                          : cosine_lr(epoch, opt.schedule);
        const auto plan = batch_plan(train_base.size(), opt.batch_size, mix_seed(opt.seed, epoch));

        double loss_acc = 0;
        std::int64_t steps_this_epoch = 0;
        for (const auto& batch_idx : plan) {
            std::vector<Sample> augmented;
            std::vector<const Sample*> ptrs;
            augmented.reserve(batch_idx.size());
            for (std::size_t idx : batch_idx) {
                const Sample& base = train_base[idx];
                if (opt.augment_enabled) {
                    std::mt19937_64 rng(
                        sample_rng_seed(opt.seed, static_cast<std::uint64_t>(epoch), base.id));
                    augmented.push_back(augment(base, opt.augment, rng));
                } else {
                    augmented.push_back(base);
                }
            }
            for (const auto& s : augmented) {
                ptrs.push_back(&s);
            }
            auto [images, masks] = stack_batch<S>(ptrs);
            auto out = model->forward(images, Mode::train);
            auto loss = layer_wise_loss(out, masks, opt.loss);
            model->zero_grad();
            loss->backward();
            optimizer.step(lr);
            loss_acc += static_cast<double>(loss->item());
            ++steps_this_epoch;
            ++result.total_steps;
            if (opt.max_steps >= 0 && result.total_steps >= opt.max_steps) {
                stop = true;
                break;
            }
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr;
        rec.steps = steps_this_epoch;
        rec.train_loss = steps_this_epoch > 0 ? loss_acc / static_cast<double>(steps_this_epoch) : 0.0;
        rec.train_miou = evaluate_miou(*model, train_base, opt.batch_size);
        rec.val_miou = val_base.empty() ? -1.0 : evaluate_miou(*model, val_base, opt.batch_size);
        result.history.push_back(rec);

        nlohmann::json jr;
        jr["epoch"] = rec.epoch;
        jr["lr"] = rec.lr;
        jr["train_loss"] = rec.train_loss;
        jr["train_miou"] = rec.train_miou;
        if (rec.val_miou >= 0) {
            jr["val_miou"] = rec.val_miou;
        } else {
            jr["val_miou"] = nullptr;
        }
        jr["steps"] = rec.steps;
        log << jr.dump() << "\n";
        log.flush();
        if (console) {
            (*console) << "epoch " << rec.epoch << "  lr " << rec.lr << "  loss " << rec.train_loss
                       << "  train mIoU " << rec.train_miou;
            if (rec.val_miou >= 0) {
                (*console) << "  val mIoU " << rec.val_miou;
            }
            (*console) << "\n";
        }

        CheckpointMeta meta;
        meta.epoch = epoch;
        meta.seed = opt.seed;
        const double metric = rec.val_miou >= 0 ? rec.val_miou : rec.train_miou;
        meta.best_metric = std::max(best_metric, metric);
        save_checkpoint(last_path, *model, &optimizer, meta);
        result.last_checkpoint = last_path;
        if (metric > best_metric) {
            best_metric = metric;
            save_checkpoint(best_path, *model, &optimizer, meta);
            result.best_checkpoint = best_path;
        }
        result.best_miou = best_metric;
    }
    return result;
}

}  // namespace smokenet
