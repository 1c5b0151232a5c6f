// Command-line entry point: train / eval / infer / profile / gradcheck /
// augment-preview. Exit codes: 0 success, 1 validation error, 2 runtime
// failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "smokenet/gradcheck.hpp"
#include "smokenet/profile.hpp"
#include "smokenet/trainer.hpp"

namespace fs = std::filesystem;
using namespace smokenet;

namespace {

struct CliState {
    // shared
    std::uint64_t seed = 0;
    int precision = 32;
    std::string out_dir = "runs/latest";
    std::string checkpoint;

    // model
    std::vector<int> filters{4, 8, 16, 32, 64, 128};
    std::string conv_kind = "multiscale";        // multiscale | normal
    std::string attention_kind = "multiview";    // multiview | spatial
    std::vector<std::string> kernels{"3x3", "3x3", "3x3"};
    std::vector<int> dilations{2, 2, 2};
    int decoder_depth = 6;
    bool no_aux_heads = false;
    int in_channels = 3;

    // loss
    double alpha = 0.5;
    double beta = 0.5;
    std::vector<double> gamma{0.5, 0.4, 0.3, 0.2, 0.1};
    double dice_smoothing = 1.0;

    // schedule / optimizer
    double eta_max = 0.001;
    double eta_min = 1e-6;
    int t_max = 100;
    double weight_decay = 1e-5;
    double lr_override = -1;

    // data / train
    std::string manifest;
    int epochs = 100;
    int batch_size = 8;
    int image_size = 256;
    bool no_augment = false;
    std::string resume;
    std::int64_t max_steps = -1;

    // augmentation
    double aug_p_hflip = 0.3, aug_p_vflip = 0.3, aug_p_rotate = 0.3, aug_p_brightness = 0.3;
    double aug_rotate_range = 15.0;
    double aug_brightness_lo = 0.8, aug_brightness_hi = 1.2;
    double aug_p_fog = 0.3, aug_fog_lo = 0.1, aug_fog_hi = 0.5;
    double aug_p_blur = 0.3;

    // eval / profile / gradcheck / infer / preview
    std::string split = "test";
    int fps_warmup = 2;
    int fps_iters = 10;
    bool per_layer = false;
    int gradcheck_seeds = 20;
    double threshold = 0.5;
    std::vector<std::string> images;
    int preview_count = 4;

    ModelConfig model_config() const {
        ModelConfig cfg;
        if (filters.size() != 6) {
            throw ConfigError("model config: --filters needs exactly 6 values");
        }
        std::copy(filters.begin(), filters.end(), cfg.filters.begin());
        StageKind conv = StageKind::multiscale;
        if (conv_kind == "normal") {
            conv = StageKind::normal_conv;
        } else if (conv_kind != "multiscale") {
            throw ConfigError(format_msg("unknown conv kind '", conv_kind, "'"));
        }
        StageKind attn = StageKind::multiview;
        if (attention_kind == "spatial") {
            attn = StageKind::spatial_attention;
        } else if (attention_kind != "multiview") {
            throw ConfigError(format_msg("unknown attention kind '", attention_kind, "'"));
        }
        cfg.encoder_blocks = {conv, conv, conv, attn, attn, attn};
        if (kernels.size() != 3 || dilations.size() != 3) {
            throw ConfigError("model config: --kernels and --dilations need exactly 3 values");
        }
        for (std::size_t i = 0; i < 3; ++i) {
            cfg.selected_kernels[i] = parse_kernel_choice(kernels[i]);
            cfg.dilations[i] = dilations[i];
        }
        cfg.decoder_depth = decoder_depth;
        cfg.aux_heads = !no_aux_heads;
        cfg.in_channels = in_channels;
        cfg.precision = precision;
        cfg.validate();
        return cfg;
    }

    LossConfig loss_config() const {
        LossConfig lc;
        lc.alpha = alpha;
        lc.beta = beta;
        if (gamma.size() != 5) {
            throw ConfigError("loss config: --gamma needs exactly 5 values");
        }
        std::copy(gamma.begin(), gamma.end(), lc.gamma.begin());
        lc.dice_smoothing = dice_smoothing;
        lc.validate();
        return lc;
    }

    ScheduleConfig schedule_config() const {
        ScheduleConfig sc;
        sc.eta_max = eta_max;
        sc.eta_min = eta_min;
        sc.total_epochs = t_max;
        sc.validate();
        return sc;
    }

    AugmentConfig augment_config() const {
        AugmentConfig ac;
        ac.p_hflip = aug_p_hflip;
        ac.p_vflip = aug_p_vflip;
        ac.p_rotate = aug_p_rotate;
        ac.rotate_range_deg = aug_rotate_range;
        ac.p_brightness = aug_p_brightness;
        ac.brightness_lo = aug_brightness_lo;
        ac.brightness_hi = aug_brightness_hi;
        ac.fog.probability = aug_p_fog;
        ac.fog.density_lo = aug_fog_lo;
        ac.fog.density_hi = aug_fog_hi;
        ac.motion_blur.probability = aug_p_blur;
        ac.seed = seed;
        ac.validate();
        return ac;
    }
};

void add_model_options(CLI::App* cmd, CliState& st) {
    cmd->add_option("--filters", st.filters, "Six encoder channel widths, each divisible by 4")
        ->expected(6)
        ->capture_default_str();
    cmd->add_option("--conv-kind", st.conv_kind, "Encoder stages 1-3: multiscale | normal")
        ->capture_default_str();
    cmd->add_option("--attention-kind", st.attention_kind, "Encoder stages 4-6: multiview | spatial")
        ->capture_default_str();
    cmd->add_option("--kernels", st.kernels,
                    "Selected kernel per multiscale stage (1x3,3x1,1x5,5x1,3x3,3x5,5x3,5x5)")
        ->expected(3)
        ->capture_default_str();
    cmd->add_option("--dilations", st.dilations, "Dilation rate of the fourth chunk per multiscale stage")
        ->expected(3)
        ->capture_default_str();
    cmd->add_option("--decoder-depth", st.decoder_depth, "Decoder stages: 6 (full) or 3 (shallow)")
        ->capture_default_str();
    cmd->add_flag("--no-aux-heads", st.no_aux_heads, "Disable the auxiliary supervision heads");
    cmd->add_option("--in-channels", st.in_channels, "Input image channels (3 RGB, 1 grayscale)")
        ->capture_default_str();
}

void add_loss_schedule_options(CLI::App* cmd, CliState& st) {
    cmd->add_option("--alpha", st.alpha, "BCE weight in the combined loss")->capture_default_str();
    cmd->add_option("--beta", st.beta, "Dice weight in the combined loss")->capture_default_str();
    cmd->add_option("--gamma", st.gamma, "Layer-loss weights for decoder stages 2..6")
        ->expected(5)
        ->capture_default_str();
    cmd->add_option("--dice-smoothing", st.dice_smoothing, "Dice smoothing constant")
        ->capture_default_str();
    cmd->add_option("--eta-max", st.eta_max, "Cosine schedule peak learning rate")->capture_default_str();
    cmd->add_option("--eta-min", st.eta_min,
                    "Cosine schedule floor. Defaults pair eta-min 1e-6 with --t-max 100; an alternative "
                    "convention uses 1e-5 with --t-max 50")
        ->capture_default_str();
    cmd->add_option("--t-max", st.t_max, "Cosine schedule horizon in epochs")->capture_default_str();
    cmd->add_option("--weight-decay", st.weight_decay, "Decoupled weight decay")->capture_default_str();
    cmd->add_option("--lr", st.lr_override, "Constant learning-rate override (disables the schedule)")
        ->capture_default_str();
}

void add_augment_options(CLI::App* cmd, CliState& st) {
    cmd->add_option("--aug-prob-flip-h", st.aug_p_hflip, "Horizontal flip probability")->capture_default_str();
    cmd->add_option("--aug-prob-flip-v", st.aug_p_vflip, "Vertical flip probability")->capture_default_str();
    cmd->add_option("--aug-prob-rotate", st.aug_p_rotate, "Rotation probability")->capture_default_str();
    cmd->add_option("--aug-rotate-range", st.aug_rotate_range, "Rotation range in degrees (+/-)")
        ->capture_default_str();
    cmd->add_option("--aug-prob-brightness", st.aug_p_brightness, "Brightness probability")
        ->capture_default_str();
    cmd->add_option("--aug-brightness-lo", st.aug_brightness_lo, "Brightness factor lower bound")
        ->capture_default_str();
    cmd->add_option("--aug-brightness-hi", st.aug_brightness_hi, "Brightness factor upper bound")
        ->capture_default_str();
    cmd->add_option("--aug-prob-fog", st.aug_p_fog, "Synthetic fog probability")->capture_default_str();
    cmd->add_option("--aug-fog-lo", st.aug_fog_lo, "Fog density lower bound")->capture_default_str();
    cmd->add_option("--aug-fog-hi", st.aug_fog_hi, "Fog density upper bound")->capture_default_str();
    cmd->add_option("--aug-prob-blur", st.aug_p_blur, "Motion blur probability")->capture_default_str();
}

// Effective options (defaults + file + command line) for the active
// subcommand, re-runnable via `smokenet --config <file> [subcommand]`.
void dump_effective_config(CLI::App& sub, const std::string& out_dir) {
    fs::create_directories(out_dir);
    std::ofstream f(fs::path(out_dir) / "config.toml");
    f << "[" << sub.get_name() << "]\n" << sub.config_to_str(true, true);
}

TrainOptions make_train_options(const CliState& st) {
    TrainOptions opt;
    opt.model = st.model_config();
    opt.loss = st.loss_config();
    opt.schedule = st.schedule_config();
    opt.augment = st.augment_config();
    opt.augment_enabled = !st.no_augment;
    opt.manifest = st.manifest;
    opt.out_dir = st.out_dir;
    opt.resume = st.resume;
    opt.epochs = st.epochs;
    opt.batch_size = st.batch_size;
    opt.image_size = st.image_size;
    opt.seed = st.seed;
    opt.learning_rate_override = st.lr_override;
    opt.weight_decay = st.weight_decay;
    opt.max_steps = st.max_steps;
    return opt;
}

template <typename S>
int run_train(const CliState& st) {
    const TrainOptions opt = make_train_options(st);
    const TrainResult res = train_run<S>(opt);
    std::cout << "done: " << res.history.size() << " epochs, " << res.total_steps << " steps, best mIoU "
              << res.best_miou << "\n";
    std::cout << "last checkpoint: " << res.last_checkpoint << "\n";
    if (!res.best_checkpoint.empty()) {
        std::cout << "best checkpoint: " << res.best_checkpoint << "\n";
    }
    return 0;
}

template <typename S>
int run_eval(const CliState& st) {
    if (st.checkpoint.empty()) {
        throw ConfigError("eval: --checkpoint is required");
    }
    auto loaded = load_checkpoint<S>(st.checkpoint);
    auto refs = load_manifest(st.manifest);
    std::vector<Sample> samples;
    for (const auto& r : refs) {
        if (r.split == st.split) {
            samples.push_back(load_sample(r, st.image_size, st.image_size));
        }
    }
    if (samples.empty()) {
        throw ConfigError(format_msg("eval: no records with split=", st.split, " in '", st.manifest, "'"));
    }

    MetricsReport rep;
    rep.miou = evaluate_miou(*loaded.model, samples, st.batch_size);
    rep.params = loaded.model->count_params(false);
    const Shape input{1, loaded.model->config().in_channels, st.image_size, st.image_size};
    rep.flops = estimate_flops(*loaded.model, input);
    const FpsReport fps = benchmark_fps(*loaded.model, input, st.fps_warmup, st.fps_iters);
    rep.fps = fps.fps;
    rep.input_shape = input;
    rep.precision_bits = sizeof(S) * 8;
    rep.environment = format_msg(fps.cpu, "; threads=", fps.threads);

    nlohmann::json j;
    j["miou"] = rep.miou;
    j["params"] = rep.params;
    j["flops"] = rep.flops;
    j["fps"] = rep.fps;
    j["input_shape"] = {input.n, input.c, input.h, input.w};
    j["precision"] = rep.precision_bits;
    j["environment"] = rep.environment;
    j["test_images"] = samples.size();
    fs::create_directories(st.out_dir);
    std::ofstream(fs::path(st.out_dir) / "metrics_report.json") << j.dump(2) << "\n";

    std::cout << std::left << std::setw(12) << "metric" << "value\n";
    std::cout << std::setw(12) << "mIoU" << rep.miou << "\n";
    std::cout << std::setw(12) << "params" << rep.params << "\n";
    std::cout << std::setw(12) << "MFLOPs" << static_cast<double>(rep.flops) / 1e6 << "\n";
    std::cout << std::setw(12) << "FPS" << rep.fps << "\n";
    std::cout << std::setw(12) << "input" << input.str() << "\n";
    std::cout << std::setw(12) << "precision" << rep.precision_bits << "-bit\n";
    std::cout << std::setw(12) << "cpu" << fps.cpu << "\n";
    return 0;
}

template <typename S>
int run_infer(const CliState& st) {
    if (st.checkpoint.empty()) {
        throw ConfigError("infer: --checkpoint is required");
    }
    if (st.images.empty()) {
        throw ConfigError("infer: at least one image path is required");
    }
    auto loaded = load_checkpoint<S>(st.checkpoint);
    fs::create_directories(st.out_dir);
    int failures = 0;
    for (const auto& path : st.images) {
        try {
            const ImageU8 raw = read_image(path, 3);
            FloatImage img = resize_bilinear(to_float(raw), st.image_size, st.image_size);
            auto x = make_tensor<S>({1, 3, st.image_size, st.image_size});
            for (std::size_t i = 0; i < img.v.size(); ++i) {
                x->data[i] = static_cast<S>(img.v[i]);
            }
            auto out = loaded.model->forward(x, Mode::eval);

            FloatImage mask = FloatImage::zero(1, st.image_size, st.image_size);
            for (std::size_t i = 0; i < mask.v.size(); ++i) {
                mask.v[i] = static_cast<double>(out.mask->data[i]) >= st.threshold ? 1.0f : 0.0f;
            }
            FloatImage mask_full = resize_nearest(mask, raw.height, raw.width);

            ImageU8 mask_png = to_u8(mask_full);
            ImageU8 overlay = raw;
            for (int y = 0; y < raw.height; ++y) {
                for (int x2 = 0; x2 < raw.width; ++x2) {
                    if (mask_full.at(0, y, x2) > 0.5f) {
                        overlay.at(y, x2, 0) =
                            static_cast<std::uint8_t>(0.5 * overlay.at(y, x2, 0) + 0.5 * 255.0);
                        overlay.at(y, x2, 1) = static_cast<std::uint8_t>(0.5 * overlay.at(y, x2, 1));
                        overlay.at(y, x2, 2) = static_cast<std::uint8_t>(0.5 * overlay.at(y, x2, 2));
                    }
                }
            }
            const std::string stem = fs::path(path).stem().string();
            write_image((fs::path(st.out_dir) / (stem + "_mask.png")).string(), mask_png);
            write_image((fs::path(st.out_dir) / (stem + "_overlay.png")).string(), overlay);
            std::cout << path << " -> " << stem << "_mask.png, " << stem << "_overlay.png\n";
        } catch (const std::exception& e) {
            std::cerr << "error: " << path << ": " << e.what() << "\n";
            ++failures;
        }
    }
    return failures > 0 ? 2 : 0;
}

int run_profile(const CliState& st) {
    std::vector<LayerCost> breakdown;
    const auto rows = profile_variants(st.image_size, &breakdown);
    std::cout << std::left << std::setw(7) << "Model" << std::setw(6) << "Conv" << std::setw(6) << "Loss"
              << std::setw(11) << "Attention" << std::right << std::setw(12) << "#Params(K)"
              << std::setw(10) << "MFLOPs" << "\n";
    for (const auto& r : rows) {
        std::cout << std::left << std::setw(7) << r.model << std::setw(6) << r.conv << std::setw(6)
                  << r.loss << std::setw(11) << r.attention << std::right << std::setw(12) << std::fixed
                  << std::setprecision(2) << static_cast<double>(r.params) / 1e3 << std::setw(10)
                  << static_cast<double>(r.flops) / 1e6 << "\n";
        std::cout.unsetf(std::ios::fixed);
    }
    std::cout << "(input " << st.image_size << "x" << st.image_size
              << ", MAC=2 FLOPs, parameter counts exclude auxiliary heads)\n";
    if (st.per_layer) {
        std::cout << "\nper-layer FLOPs for M8:\n";
        for (const auto& c : breakdown) {
            std::cout << "  " << std::left << std::setw(26) << c.name << std::right << std::setw(12)
                      << c.flops << (c.conv ? "  conv" : "") << "\n";
        }
    }
    return 0;
}

int run_gradcheck(const CliState& st, int requested_precision) {
    if (requested_precision != 64) {
        warn("gradcheck verifies at 64-bit precision regardless of --precision");
    }
    const double tol = 1e-5;
    bool ok = true;
    std::cout << std::left << std::setw(30) << "op" << std::setw(16) << "max rel err" << "status\n";
    auto report = [&](const std::vector<OpGradReport>& rs) {
        for (const auto& r : rs) {
            const bool pass = r.max_rel_err < tol;
            ok = ok && pass;
            std::cout << std::left << std::setw(30) << r.op << std::setw(16) << r.max_rel_err
                      << (pass ? "pass" : "FAIL") << "\n";
        }
    };
    report(run_gradient_suite(st.gradcheck_seeds));
    report(run_block_gradient_suite(std::max(1, st.gradcheck_seeds / 4)));
    std::cout << (ok ? "gradcheck: all passed\n" : "gradcheck: FAILURES above\n");
    return ok ? 0 : 2;
}

int run_augment_preview(const CliState& st) {
    auto refs = load_manifest(st.manifest);
    if (refs.empty()) {
        throw ConfigError("augment-preview: manifest is empty");
    }
    fs::create_directories(st.out_dir);
    const AugmentConfig cfg = st.augment_config();
    const int count = std::min<int>(st.preview_count, static_cast<int>(refs.size()));
    for (int i = 0; i < count; ++i) {
        Sample s = load_sample(refs[static_cast<std::size_t>(i)], st.image_size, st.image_size);
        std::mt19937_64 rng(sample_rng_seed(st.seed, 0, s.id));
        Sample aug = augment(s, cfg, rng);
        write_image((fs::path(st.out_dir) / (aug.id + "_aug.png")).string(), to_u8(aug.image));
        FloatImage m = aug.mask;
        write_image((fs::path(st.out_dir) / (aug.id + "_mask.png")).string(), to_u8(m));
        std::cout << aug.id << ":";
        for (const auto& t : aug.augmentation_log) {
            std::cout << " " << t;
        }
        if (aug.augmentation_log.empty()) {
            std::cout << " (no transforms drawn)";
        }
        std::cout << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CliState st;
    CLI::App app{"SmokeNet: lightweight smoke segmentation (training, inference, profiling)"};
    app.require_subcommand(1);
    app.set_config("--config", "", "Read options from a TOML/INI config file");
    app.allow_config_extras(CLI::config_extras_mode::error);

    auto* train = app.add_subcommand("train", "Train on a manifest's train/val splits");
    train->configurable(true);
    train->add_option("--manifest", st.manifest, "Line-delimited JSON dataset manifest")->required();
    train->add_option("--epochs", st.epochs, "Training epochs")->capture_default_str();
    train->add_option("--batch-size", st.batch_size, "Batch size")->capture_default_str();
    train->add_option("--image-size", st.image_size, "Square training resolution (divisible by 64)")
        ->capture_default_str();
    train->add_option("--seed", st.seed, "Run seed")->capture_default_str();
    train->add_option("--precision", st.precision, "Arithmetic width: 32 or 64")->capture_default_str();
    train->add_option("--out", st.out_dir, "Artifact directory")->capture_default_str();
    train->add_option("--resume", st.resume, "Checkpoint to resume from");
    train->add_option("--max-steps", st.max_steps, "Stop after this many optimizer steps (-1: no cap)")
        ->capture_default_str();
    train->add_flag("--no-augment", st.no_augment, "Disable the augmentation pipeline");
    add_model_options(train, st);
    add_loss_schedule_options(train, st);
    add_augment_options(train, st);

    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest split");
    eval->configurable(true);
    eval->add_option("--checkpoint", st.checkpoint, "Model checkpoint")->required();
    eval->add_option("--manifest", st.manifest, "Dataset manifest")->required();
    eval->add_option("--split", st.split, "Manifest split to evaluate")->capture_default_str();
    eval->add_option("--batch-size", st.batch_size, "Batch size")->capture_default_str();
    eval->add_option("--image-size", st.image_size, "Square eval resolution")->capture_default_str();
    eval->add_option("--precision", st.precision, "Arithmetic width: 32 or 64")->capture_default_str();
    eval->add_option("--out", st.out_dir, "Report directory")->capture_default_str();
    eval->add_option("--fps-warmup", st.fps_warmup, "Benchmark warmup iterations")->capture_default_str();
    eval->add_option("--fps-iters", st.fps_iters, "Benchmark timed iterations")->capture_default_str();

    auto* infer = app.add_subcommand("infer", "Write mask + overlay rasters for images");
    infer->configurable(true);
    infer->add_option("--checkpoint", st.checkpoint, "Model checkpoint")->required();
    infer->add_option("images", st.images, "Input image paths")->required();
    infer->add_option("--out", st.out_dir, "Output directory")->capture_default_str();
    infer->add_option("--image-size", st.image_size, "Processing resolution")->capture_default_str();
    infer->add_option("--threshold", st.threshold, "Mask binarization threshold")->capture_default_str();
    infer->add_option("--precision", st.precision, "Arithmetic width: 32 or 64")->capture_default_str();

    auto* profile = app.add_subcommand("profile", "Parameter/FLOP table over module variants M1-M8");
    profile->configurable(true);
    profile->add_option("--image-size", st.image_size, "Input resolution for FLOP estimates")
        ->default_val(256);
    profile->add_flag("--per-layer", st.per_layer, "Print the per-layer FLOP breakdown for M8");

    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference verification of all operators");
    gradcheck->configurable(true);
    gradcheck->add_option("--seeds", st.gradcheck_seeds, "Random instances per operator")
        ->capture_default_str();
    gradcheck->add_option("--precision", st.precision, "Ignored: gradcheck always runs at 64-bit")
        ->capture_default_str();

    auto* preview = app.add_subcommand("augment-preview", "Write augmented samples to a directory");
    preview->configurable(true);
    preview->add_option("--manifest", st.manifest, "Dataset manifest")->required();
    preview->add_option("--out", st.out_dir, "Output directory")->capture_default_str();
    preview->add_option("--count", st.preview_count, "Samples to render")->capture_default_str();
    preview->add_option("--image-size", st.image_size, "Processing resolution")->capture_default_str();
    preview->add_option("--seed", st.seed, "Augmentation seed")->capture_default_str();
    add_augment_options(preview, st);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (st.precision != 32 && st.precision != 64) {
            throw ConfigError(format_msg("--precision must be 32 or 64, got ", st.precision));
        }
        const bool dbl = st.precision == 64;
        if (train->parsed()) {
            dump_effective_config(*train, st.out_dir);
            return dbl ? run_train<double>(st) : run_train<float>(st);
        }
        if (eval->parsed()) {
            return dbl ? run_eval<double>(st) : run_eval<float>(st);
        }
        if (infer->parsed()) {
            return dbl ? run_infer<double>(st) : run_infer<float>(st);
        }
        if (profile->parsed()) {
            return run_profile(st);
        }
        if (gradcheck->parsed()) {
            return run_gradcheck(st, st.precision);
        }
        if (preview->parsed()) {
            dump_effective_config(*preview, st.out_dir);
            return run_augment_preview(st);
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const ShapeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
