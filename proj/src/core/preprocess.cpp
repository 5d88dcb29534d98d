#include "core/preprocess.hpp"

#include <cmath>

namespace preview::preprocess {

vec3 compute_com(const dataio::depth_image& img, const camera_view& intr,
                 double foreground_band_mm) {
    require(intr.fx != 0.0 && intr.fy != 0.0, errc::config, "compute_com: degenerate intrinsics");

    float z_min = std::numeric_limits<float>::infinity();
    for (float v : img.values)
        if (v > 0.0f) z_min = std::min(z_min, v);
    require(std::isfinite(double(z_min)), errc::config, "compute_com: frame has no valid pixels");

    const double z_cut = double(z_min) + foreground_band_mm;
    vec3 acc{0, 0, 0};
    size_t count = 0;
    for (int r = 0; r < img.height; ++r) {
        for (int c = 0; c < img.width; ++c) {
            float z = img.at(r, c);
            if (z <= 0.0f || double(z) > z_cut) continue;
            acc += intr.backproject(double(c), double(r), double(z));
            ++count;
        }
    }
    return acc * (1.0 / double(count));
}

normalized_crop crop_and_normalize(const dataio::depth_image& img, const camera_view& intr,
                                   const vec3& com, double crop_cube_side_mm,
                                   double depth_range_mm) {
    require(std::isfinite(com.x) && std::isfinite(com.y) && std::isfinite(com.z) && com.z > 0.0,
            errc::config, "crop: CoM must be finite with positive depth");
    require(crop_cube_side_mm > 0.0 && depth_range_mm > 0.0, errc::config,
            "crop: parameters must be positive");

    const auto [u0, v0] = intr.project(com);
    const double half_u = intr.fx * (crop_cube_side_mm / 2.0) / com.z;
    const double half_v = intr.fy * (crop_cube_side_mm / 2.0) / com.z;

    require(u0 + half_u >= 0.0 && u0 - half_u <= img.width - 1.0 && v0 + half_v >= 0.0 &&
                v0 - half_v <= img.height - 1.0,
            errc::config, "crop: window lies fully outside the image");

    normalized_crop out;
    out.meta = {com, crop_cube_side_mm, depth_range_mm, intr.id};

    const int n = k_crop_resolution;
    for (int r = 0; r < n; ++r) {
        // Window cell centres; nearest source pixel (centres at integers).
        const double v = v0 - half_v + (double(r) + 0.5) * (2.0 * half_v / n);
        const long sr = std::lround(v);
        for (int c = 0; c < n; ++c) {
            const double u = u0 - half_u + (double(c) + 0.5) * (2.0 * half_u / n);
            const long sc = std::lround(u);
            float value = 1.0f;
            if (sr >= 0 && sr < img.height && sc >= 0 && sc < img.width) {
                float z = img.at(int(sr), int(sc));
                if (z > 0.0f)
                    value = float(std::clamp((double(z) - com.z) / depth_range_mm, -1.0, 1.0));
            }
            out.pixels[size_t(r) * size_t(n) + size_t(c)] = value;
        }
    }
    return out;
}

normalized_crop preprocess_view(const dataio::depth_image& img, const camera_view& intr,
                                const crop_params& params) {
    params.validate();
    vec3 com = compute_com(img, intr, params.foreground_band_mm);
    return crop_and_normalize(img, intr, com, params.crop_cube_side_mm, params.depth_range_mm);
}

}  // namespace preview::preprocess
