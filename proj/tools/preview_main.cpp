// Command-line front end. All heavy lifting happens behind the C API in
// libpreview; this binary only parses flags, merges them over an optional
// config file, and maps pv_status values onto exit codes (0 ok, 2 config,
// 3 I/O, 4 numeric).

#include <cstdio>
#include <fstream>
#include <iostream>
#include <functional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "preview/preview.h"

namespace {

using nlohmann::ordered_json;

struct option_bag {
    std::string config_file;

    // Registers a flag that lands in the config document under `key` when
    // the user passes it. Values are collected after parsing completes.
    template <typename T>
    void add(CLI::App* cmd, const std::string& flag, const std::string& key,
             const std::string& help) {
        auto value = std::make_shared<T>();
        auto* opt = cmd->add_option(flag, *value, help);
        collectors_.push_back([opt, key, value](ordered_json& j) {
            if (opt->count() > 0) j[key] = *value;
        });
    }

    ordered_json merged() const {
        ordered_json j = ordered_json::object();
        if (!config_file.empty()) {
            std::ifstream f(config_file);
            if (!f) {
                std::cerr << "error: cannot open config file: " << config_file << "\n";
                std::exit(3);
            }
            try {
                j = ordered_json::parse(f);
            } catch (const std::exception& e) {
                std::cerr << "error: config file is not valid JSON: " << e.what() << "\n";
                std::exit(2);
            }
        }
        for (const auto& collect : collectors_) collect(j);
        return j;
    }

  private:
    std::vector<std::function<void(ordered_json&)>> collectors_;
};

int finish(pv_status status) {
    if (status != PV_OK) {
        std::cerr << "error: " << pv_last_error() << "\n";
        return int(status);
    }
    return 0;
}

void add_common(CLI::App* cmd, option_bag& bag) {
    cmd->add_option("--config", bag.config_file, "JSON config file; flags override its values");
    bag.add<std::uint64_t>(cmd, "--seed", "seed", "root random seed");
    bag.add<bool>(cmd, "--deterministic", "deterministic",
                  "single-threaded, bit-reproducible mode");
}

void add_train_flags(CLI::App* cmd, option_bag& bag) {
    bag.add<std::string>(cmd, "--dataset", "dataset", "dataset directory or manifest path");
    bag.add<std::string>(cmd, "--out", "out_dir", "run output directory");
    bag.add<std::string>(cmd, "--mode", "mode",
                         "preview|autoencoder|semi|semi_adversarial|supervised");
    bag.add<int>(cmd, "--epochs", "epochs", "training epochs");
    bag.add<int>(cmd, "--batch-size", "batch_size", "mini-batch size");
    bag.add<double>(cmd, "--learning-rate", "learning_rate", "optimizer learning rate");
    bag.add<double>(cmd, "--beta1", "beta1", "optimizer beta1");
    bag.add<double>(cmd, "--beta2", "beta2", "optimizer beta2");
    bag.add<int>(cmd, "--d-t", "d_t", "latent size");
    bag.add<int>(cmd, "--base-channels", "base_channels", "first-stage channel count");
    bag.add<bool>(cmd, "--com-conditioning", "com_conditioning",
                  "feed the normalized CoM to the decoder");
    bag.add<double>(cmd, "--lambda-l", "lambda_l", "pose loss weight");
    bag.add<double>(cmd, "--lambda-a", "lambda_a", "adversarial loss weight");
    bag.add<double>(cmd, "--huber-epsilon", "huber_epsilon", "Huber threshold (normalized units)");
    bag.add<double>(cmd, "--l-r", "l_r", "discriminator label for real samples");
    bag.add<double>(cmd, "--l-g", "l_g", "discriminator label for generated samples");
    bag.add<std::string>(cmd, "--adv-conditioning", "adv_conditioning",
                         "none|input|pose|input_pose");
    bag.add<bool>(cmd, "--early-stopping", "early_stopping", "select the best epoch by val ME");
    bag.add<double>(cmd, "--crop-cube-side-mm", "crop_cube_side_mm", "metric crop size");
    bag.add<double>(cmd, "--depth-range-mm", "depth_range_mm", "depth normalization range");
    bag.add<double>(cmd, "--foreground-band-mm", "foreground_band_mm",
                    "CoM foreground band behind the closest point");
    bag.add<double>(cmd, "--com-jitter-mm", "com_jitter_mm",
                    "detection-perturbation augmentation (0 = off)");
    bag.add<int>(cmd, "--dropout-holes", "dropout_holes",
                 "sensor-dropout augmentation: holes per view (0 = off)");
    bag.add<std::uint64_t>(cmd, "--n-labeled", "n_labeled",
                           "labeled training subset size (0 = all)");
    bag.add<std::uint64_t>(cmd, "--val-count", "val_count", "validation set size (0 = auto)");
    bag.add<std::uint64_t>(cmd, "--test-count", "test_count", "test set size (0 = auto)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"preview: pose-specific representations from multi-view depth data"};
    app.require_subcommand(1);

    option_bag gen_bag, train_bag, probe_bag, eval_bag, analyze_bag;

    auto* gen = app.add_subcommand("synth-gen", "generate a synthetic two-view depth dataset");
    add_common(gen, gen_bag);
    gen_bag.add<std::string>(gen, "--out", "out_dir", "dataset output directory");
    gen_bag.add<int>(gen, "--n", "n", "number of samples");
    gen_bag.add<double>(gen, "--labeled-fraction", "labeled_fraction",
                        "fraction of samples with annotations");
    gen_bag.add<int>(gen, "--height", "height", "raw image height");
    gen_bag.add<int>(gen, "--width", "width", "raw image width");
    gen_bag.add<double>(gen, "--fx", "fx", "focal length x (px)");
    gen_bag.add<double>(gen, "--fy", "fy", "focal length y (px)");
    gen_bag.add<double>(gen, "--view-separation-deg", "view_separation_deg",
                        "second-camera azimuthal offset");
    gen_bag.add<int>(gen, "--fingers", "fingers", "finger count");
    gen_bag.add<int>(gen, "--segments", "segments", "segments per finger");
    gen_bag.add<double>(gen, "--noise-sigma-mm", "noise_sigma_mm", "additive depth noise");
    gen_bag.add<double>(gen, "--orientation-range-deg", "orientation_range_deg",
                        "max global rotation");
    gen_bag.add<double>(gen, "--translation-xy-mm", "translation_xy_mm", "lateral range");
    gen_bag.add<double>(gen, "--translation-z-min-mm", "translation_z_min_mm", "near depth");
    gen_bag.add<double>(gen, "--translation-z-max-mm", "translation_z_max_mm", "far depth");

    auto* train = app.add_subcommand("train", "train a model");
    add_common(train, train_bag);
    add_train_flags(train, train_bag);

    auto* probe = app.add_subcommand("probe",
                                     "frozen-encoder linear probe (repeated subsampling)");
    add_common(probe, probe_bag);
    probe_bag.add<std::string>(probe, "--dataset", "dataset", "dataset directory or manifest");
    probe_bag.add<std::string>(probe, "--out", "out_dir", "run output directory");
    probe_bag.add<std::string>(probe, "--checkpoint", "checkpoint", "trained checkpoint");
    probe_bag.add<std::uint64_t>(probe, "--n", "n_labeled", "labeled samples per repeat");
    probe_bag.add<int>(probe, "--repeats", "repeats", "number of repeats");
    probe_bag.add<int>(probe, "--probe-epochs", "probe_epochs", "head training epochs");
    probe_bag.add<double>(probe, "--probe-learning-rate", "probe_learning_rate",
                          "head learning rate");
    probe_bag.add<int>(probe, "--batch-size", "batch_size", "head training batch size");
    probe_bag.add<std::uint64_t>(probe, "--val-count", "val_count",
                                 "original validation size (0 = auto)");
    probe_bag.add<std::uint64_t>(probe, "--test-count", "test_count", "test size (0 = auto)");

    auto* eval = app.add_subcommand("eval", "evaluate a predictions file against ground truth");
    add_common(eval, eval_bag);
    eval_bag.add<std::string>(eval, "--dataset", "dataset", "dataset directory or manifest");
    eval_bag.add<std::string>(eval, "--out", "out_dir", "run output directory");
    eval_bag.add<std::string>(eval, "--predictions", "predictions",
                              "JSON file {sample id -> K x 3 mm}");

    auto* analyze = app.add_subcommand("analyze", "latent-space introspection");
    add_common(analyze, analyze_bag);
    analyze_bag.add<std::string>(analyze, "--dataset", "dataset",
                                 "dataset directory or manifest");
    analyze_bag.add<std::string>(analyze, "--out", "out_dir", "run output directory");
    analyze_bag.add<std::string>(analyze, "--checkpoint", "checkpoint", "trained checkpoint");
    analyze_bag.add<std::string>(analyze, "--mode", "analyze_mode", "nn|neurons|grid");
    analyze_bag.add<int>(analyze, "--k", "k", "neighbours / samples per neuron (0 = default)");
    analyze_bag.add<int>(analyze, "--neuron", "neuron", "neuron index (-1 = all)");
    analyze_bag.add<int>(analyze, "--grid-count", "grid_count", "samples in the grid");
    analyze_bag.add<int>(analyze, "--query-count", "query_count", "nn query count");
    analyze_bag.add<std::uint64_t>(analyze, "--val-count", "val_count",
                                   "validation split size (0 = auto)");
    analyze_bag.add<std::uint64_t>(analyze, "--test-count", "test_count",
                                   "test split size (0 = auto)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    if (gen->parsed()) {
        const std::string cfg = gen_bag.merged().dump();
        return finish(pv_run_synth_gen(cfg.c_str()));
    }
    if (train->parsed()) {
        const std::string cfg = train_bag.merged().dump();
        return finish(pv_run_train(cfg.c_str()));
    }
    if (probe->parsed()) {
        const std::string cfg = probe_bag.merged().dump();
        return finish(pv_run_probe(cfg.c_str()));
    }
    if (eval->parsed()) {
        const std::string cfg = eval_bag.merged().dump();
        return finish(pv_run_eval(cfg.c_str()));
    }
    if (analyze->parsed()) {
        const std::string cfg = analyze_bag.merged().dump();
        return finish(pv_run_analyze(cfg.c_str()));
    }
    return 2;
}
