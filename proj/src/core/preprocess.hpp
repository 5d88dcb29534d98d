#pragma once

#include <array>
#include <vector>

#include "core/dataio.hpp"
#include "core/geometry.hpp"

namespace preview::preprocess {

inline constexpr int k_crop_resolution = 64;
inline constexpr int k_crop_pixels = k_crop_resolution * k_crop_resolution;

struct crop_params {
    double crop_cube_side_mm = 300.0;
    double depth_range_mm = 150.0;
    double foreground_band_mm = 200.0;  // depth band behind the closest point

    // Optional detection-perturbation augmentation: the input view's crop
    // anchor is offset by a deterministic per-sample vector uniform in
    // [-com_jitter_mm, com_jitter_mm]^3. Off by default.
    double com_jitter_mm = 0.0;
    std::uint64_t jitter_seed = 1;

    // Optional sensor-dropout augmentation: per view, this many circular
    // patches (radius in pixels, uniform in the range below) are blanked to
    // background, mimicking the holes of structured-light/ToF depth maps.
    // Off by default.
    int dropout_holes = 0;
    double hole_radius_min_px = 4.0;
    double hole_radius_max_px = 12.0;

    void validate() const {
        require(crop_cube_side_mm > 0.0 && depth_range_mm > 0.0 && foreground_band_mm > 0.0,
                errc::config, "crop parameters must be positive");
        require(com_jitter_mm >= 0.0, errc::config, "com_jitter_mm must be >= 0");
        require(dropout_holes >= 0, errc::config, "dropout_holes must be >= 0");
        require(hole_radius_min_px > 0.0 && hole_radius_max_px >= hole_radius_min_px,
                errc::config, "hole radius range is invalid");
    }
};

struct crop_meta {
    vec3 com;  // mm, camera frame
    double crop_cube_side_mm = 0.0;
    double depth_range_mm = 0.0;
    std::string source_view;
};

// 64 x 64 crop with values in [-1, 1]; background is exactly +1.
struct normalized_crop {
    std::array<float, k_crop_pixels> pixels{};
    crop_meta meta;
};

// Centre of mass of the foreground: valid pixels whose depth lies within
// foreground_band of the closest valid depth, back-projected to 3D and
// averaged.
vec3 compute_com(const dataio::depth_image& img, const camera_view& intrinsics,
                 double foreground_band_mm = 200.0);

// Metric crop around the CoM resampled to 64 x 64 (nearest neighbour), depth
// mapped by clamp((v - com_z) / depth_range, -1, 1); invalid pixels map
// to +1.
normalized_crop crop_and_normalize(const dataio::depth_image& img, const camera_view& intrinsics,
                                   const vec3& com, double crop_cube_side_mm,
                                   double depth_range_mm);

// CoM + crop in one step with the configured parameters.
normalized_crop preprocess_view(const dataio::depth_image& img, const camera_view& intrinsics,
                                const crop_params& params);

}  // namespace preview::preprocess
