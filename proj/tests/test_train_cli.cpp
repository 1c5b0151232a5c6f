#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

#include "oracles.hpp"
#include "testutil.hpp"
#include "smokenet/trainer.hpp"

using namespace smokenet;
namespace fs = std::filesystem;

namespace {

TrainOptions toy_options(const std::string& manifest, const std::string& out_dir, int epochs) {
    TrainOptions opt;
    opt.manifest = manifest;
    opt.out_dir = out_dir;
    opt.epochs = epochs;
    opt.batch_size = 4;
    opt.image_size = 64;
    opt.augment_enabled = false;
    opt.schedule.total_epochs = 300;
    opt.seed = 5;
    return opt;
}

int run_cli(const std::string& args, const std::string& log_file = "/dev/null") {
    const std::string cmd = std::string(SMOKENET_CLI_PATH) + " " + args + " >" + log_file + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& path) {
    std::ifstream f(path);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("train: epoch-0 lr equals eta_max and runs are bit-deterministic") {
    testutil::TempDir data("traindet");
    testutil::write_toyset(data.path);
    testutil::TempDir out1("out1"), out2("out2");

    auto opt1 = toy_options(data.file("manifest.jsonl"), out1.file("run"), 5);
    auto opt2 = toy_options(data.file("manifest.jsonl"), out2.file("run"), 5);
    std::ostringstream sink;
    const auto r1 = train_run<double>(opt1, &sink);
    const auto r2 = train_run<double>(opt2, &sink);
    REQUIRE(r1.history.size() == 5);
    CHECK(r1.history[0].lr == 0.001);
    for (std::size_t i = 0; i < r1.history.size(); ++i) {
        CHECK(r1.history[i].train_loss == r2.history[i].train_loss);
        CHECK(r1.history[i].train_miou == r2.history[i].train_miou);
    }
    CHECK(fs::exists(out1.file("run/last.ckpt")));
    CHECK(fs::exists(out1.file("run/train_log.jsonl")));
}

TEST_CASE("train: resume from epoch k matches the straight run bit-exactly") {
    testutil::TempDir data("resume");
    testutil::write_toyset(data.path);
    testutil::TempDir outa("runa"), outb("runb");
    std::ostringstream sink;

    auto full = toy_options(data.file("manifest.jsonl"), outa.file("run"), 6);
    const auto rfull = train_run<double>(full, &sink);

    auto head = toy_options(data.file("manifest.jsonl"), outb.file("run"), 3);
    train_run<double>(head, &sink);
    auto tail = toy_options(data.file("manifest.jsonl"), outb.file("run"), 6);
    tail.resume = outb.file("run/last.ckpt");
    const auto rtail = train_run<double>(tail, &sink);

    REQUIRE(rfull.history.size() == 6);
    REQUIRE(rtail.history.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(rtail.history[i].epoch == rfull.history[i + 3].epoch);
        CHECK(rtail.history[i].train_loss == rfull.history[i + 3].train_loss);
        CHECK(rtail.history[i].train_miou == rfull.history[i + 3].train_miou);
    }
}

TEST_CASE("train: validation errors") {
    testutil::TempDir data("trainerr");
    testutil::write_toyset(data.path, 2, "test");  // no train split
    std::ostringstream sink;
    auto opt = toy_options(data.file("manifest.jsonl"), data.file("out"), 2);
    CHECK_THROWS_AS(train_run<double>(opt, &sink), Error);

    testutil::TempDir data2("trainsteps");
    testutil::write_toyset(data2.path);
    auto capped = toy_options(data2.file("manifest.jsonl"), data2.file("out"), 10);
    capped.max_steps = 2;
    const auto r = train_run<double>(capped, &sink);
    CHECK(r.total_steps == 2);

    auto over = toy_options(data2.file("manifest.jsonl"), data2.file("out2"), 500);
    over.schedule.total_epochs = 100;
    CHECK_THROWS_AS(train_run<double>(over, &sink), ConfigError);
}

TEST_CASE("cli: profile is pure and stable across runs") {
    testutil::TempDir out("profile");
    CHECK(run_cli("profile", out.file("p1.txt")) == 0);
    CHECK(run_cli("profile", out.file("p2.txt")) == 0);
    CHECK(slurp(out.file("p1.txt")) == slurp(out.file("p2.txt")));
    const std::string table = slurp(out.file("p1.txt"));
    CHECK(table.find("M8") != std::string::npos);
    CHECK(table.find("306.94") != std::string::npos);
}

TEST_CASE("cli: gradcheck subcommand passes") {
    testutil::TempDir out("gc");
    CHECK(run_cli("gradcheck --seeds 2", out.file("gc.txt")) == 0);
    const std::string text = slurp(out.file("gc.txt"));
    CHECK(text.find("all passed") != std::string::npos);
    CHECK(text.find("conv2d") != std::string::npos);
}

TEST_CASE("cli: parse and validation failures exit with code 1") {
    CHECK(run_cli("train") == 1);                        // missing --manifest
    CHECK(run_cli("definitely-not-a-subcommand") == 1);  // unknown command
    testutil::TempDir data("badprec");
    testutil::write_toyset(data.path, 1);
    CHECK(run_cli("train --manifest " + data.file("manifest.jsonl") + " --precision 48") == 1);
}

TEST_CASE("cli: train, config round-trip, eval, infer") {
    testutil::TempDir data("endtoend");
    testutil::write_toyset(data.path, 4);
    {
        std::ofstream extra(data.path / "manifest.jsonl", std::ios::app);
        extra << R"({"image_path":"train_img0.png","mask_path":"train_mask0.png","split":"test","id":"t0"})" << "\n";
    }
    testutil::TempDir run("run");

    const std::string train_args = "train --manifest " + data.file("manifest.jsonl") +
                                   " --epochs 30 --t-max 300 --batch-size 4 --image-size 64 --no-augment"
                                   " --seed 7 --precision 64 --out " + run.file("a");
    REQUIRE(run_cli(train_args, run.file("train_a.txt")) == 0);
    REQUIRE(fs::exists(run.file("a/config.toml")));
    REQUIRE(fs::exists(run.file("a/last.ckpt")));

    // Re-running from the dumped effective config reproduces the run
    // (--config is an app-level flag, so it precedes the subcommand).
    const int rc = run_cli("--config " + run.file("a/config.toml") + " train --out " + run.file("b"),
                           run.file("train_b.txt"));
    REQUIRE(rc == 0);
    auto strip_out_lines = [](const std::string& text) {
        std::string kept;
        std::istringstream is(text);
        std::string line;
        while (std::getline(is, line)) {
            if (line.find("checkpoint:") == std::string::npos) {
                kept += line + "\n";
            }
        }
        return kept;
    };
    CHECK(strip_out_lines(slurp(run.file("train_a.txt"))) == strip_out_lines(slurp(run.file("train_b.txt"))));
    CHECK(slurp(run.file("a/train_log.jsonl")) == slurp(run.file("b/train_log.jsonl")));

    // eval: populated report on the test split
    const std::string eval_args = "eval --checkpoint " + run.file("a/last.ckpt") + " --manifest " +
                                  data.file("manifest.jsonl") +
                                  " --image-size 64 --precision 64 --fps-warmup 1 --fps-iters 3 --out " +
                                  run.file("eval");
    REQUIRE(run_cli(eval_args, run.file("eval.txt")) == 0);
    REQUIRE(fs::exists(run.file("eval/metrics_report.json")));
    const std::string report = slurp(run.file("eval/metrics_report.json"));
    for (const char* key : {"miou", "params", "flops", "fps", "input_shape", "precision", "environment"}) {
        INFO(key);
        CHECK(report.find(key) != std::string::npos);
    }

    // eval: empty split -> validation error
    CHECK(run_cli("eval --checkpoint " + run.file("a/last.ckpt") + " --manifest " +
                  data.file("manifest.jsonl") + " --split val --image-size 64") == 1);
    // eval: missing checkpoint -> runtime error
    CHECK(run_cli("eval --checkpoint /nonexistent.ckpt --manifest " + data.file("manifest.jsonl")) == 2);

    // infer: mask + overlay per image; deterministic outputs
    const std::string infer_args = "infer --checkpoint " + run.file("a/last.ckpt") + " --image-size 64" +
                                   " --precision 64 --out " + run.file("masks") + " " + data.file("train_img0.png");
    REQUIRE(run_cli(infer_args, run.file("infer.txt")) == 0);
    REQUIRE(fs::exists(run.file("masks/train_img0_mask.png")));
    REQUIRE(fs::exists(run.file("masks/train_img0_overlay.png")));
    const std::string first = slurp(run.file("masks/train_img0_mask.png"));
    REQUIRE(run_cli(infer_args, run.file("infer2.txt")) == 0);
    CHECK(slurp(run.file("masks/train_img0_mask.png")) == first);

    // all-black input: still produces a valid (possibly empty) mask
    ImageU8 black;
    black.width = black.height = 64;
    black.channels = 3;
    black.pixels.assign(64 * 64 * 3, 0);
    write_image(data.file("black.png"), black);
    CHECK(run_cli("infer --checkpoint " + run.file("a/last.ckpt") + " --image-size 64 --out " +
                  run.file("masks") + " " + data.file("black.png")) == 0);
    CHECK(fs::exists(run.file("masks/black_mask.png")));

    // partial failure: bad path makes exit code 2 but good files still land
    fs::remove(run.file("masks/train_img0_mask.png"));
    CHECK(run_cli("infer --checkpoint " + run.file("a/last.ckpt") + " --image-size 64 --out " +
                  run.file("masks") + " /nonexistent.png " + data.file("train_img0.png")) == 2);
    CHECK(fs::exists(run.file("masks/train_img0_mask.png")));
}

TEST_CASE("cli: augment-preview writes transformed rasters") {
    testutil::TempDir data("preview");
    testutil::write_toyset(data.path, 3);
    testutil::TempDir out("previewout");
    const int rc = run_cli("augment-preview --manifest " + data.file("manifest.jsonl") +
                           " --image-size 64 --count 2 --seed 3 --out " + out.file("aug"),
                           out.file("prev.txt"));
    REQUIRE(rc == 0);
    CHECK(fs::exists(out.file("aug/train0_aug.png")));
    CHECK(fs::exists(out.file("aug/train0_mask.png")));
    CHECK(fs::exists(out.file("aug/train1_aug.png")));
}
