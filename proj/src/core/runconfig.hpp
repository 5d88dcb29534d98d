#pragma once

#include <cstdint>
#include <string>

namespace preview {

// Fully-resolved run configuration. The CLI merges a config file with flag
// overrides (flags win) into this structure; every field has the documented
// default below and unknown keys are rejected.
struct run_config {
    // shared
    std::string dataset;      // manifest path
    std::string out_dir;      // run directory for outputs
    std::string checkpoint;   // input checkpoint (probe / analyze / eval helpers)
    std::string predictions;  // predictions JSON (eval)
    std::uint64_t seed = 1;
    bool deterministic = false;  // forced on by PREVIEW_DETERMINISTIC=1

    // synth-gen
    int n = 1000;
    double labeled_fraction = 1.0;
    int height = 384, width = 384;
    double fx = 430.0, fy = 430.0;
    double view_separation_deg = 60.0;
    int fingers = 3, segments = 2;
    double noise_sigma_mm = 0.0;
    double orientation_range_deg = 70.0;
    double translation_xy_mm = 60.0;
    double translation_z_min_mm = 540.0, translation_z_max_mm = 660.0;

    // train
    std::string mode = "preview";
    int epochs = 100;
    int batch_size = 128;
    double learning_rate = 1e-4;
    double beta1 = 0.5, beta2 = 0.999;
    int d_t = 50;
    int base_channels = 64;
    bool com_conditioning = true;
    double lambda_l = 10.0, lambda_a = 0.0;
    double huber_epsilon = 0.1;
    double l_r = 1.0, l_g = 0.0;
    std::string adv_conditioning = "none";
    bool early_stopping = true;
    double crop_cube_side_mm = 300.0, depth_range_mm = 150.0, foreground_band_mm = 200.0;
    double com_jitter_mm = 0.0;  // detection-perturbation augmentation (0 = off)
    int dropout_holes = 0;       // sensor-dropout augmentation: holes per view (0 = off)
    std::uint64_t n_labeled = 0;  // 0: use the full labeled pool
    std::uint64_t val_count = 0;  // 0: auto (10% of labeled, capped at 2000)
    std::uint64_t test_count = 0; // 0: auto (same rule)

    // probe
    int repeats = 10;
    int probe_epochs = 300;
    double probe_learning_rate = 1e-3;

    // analyze
    std::string analyze_mode = "grid";  // nn | neurons | grid
    int k = 0;      // 0: mode default (8 neighbours / 10 samples per neuron)
    int neuron = -1;  // -1: all neurons
    int grid_count = 16;
    int query_count = 8;

    // Parses and validates; rejects unknown keys with the offending name.
    static run_config from_json(const std::string& text);

    // Applies a single "key=value"-style override (CLI flags funnel through
    // this), with the same validation as the file path.
    void apply_override(const std::string& key, const std::string& value);

    // Fully-resolved snapshot of every field.
    std::string to_json() const;

    void validate() const;
};

}  // namespace preview
