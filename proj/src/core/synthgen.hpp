#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "core/dataio.hpp"
#include "core/geometry.hpp"

namespace preview::synthgen {

// Articulated capsule hand: a palm sphere with `finger_count` chains of
// capsule segments fanned in the palm plane. Joint markers are the palm
// centre plus, per finger, the root and the tip of every segment, giving
// K = 1 + finger_count * (segments_per_finger + 1).
struct kinematic_model {
    int finger_count = 3;
    int segments_per_finger = 2;
    std::vector<double> segment_lengths;  // mm, flattened [finger][segment]
    std::vector<double> segment_radii;    // mm, same layout
    double palm_radius = 40.0;
    double finger_spread_rad = 0.56;  // angle between adjacent finger base directions

    int joint_count() const { return 1 + finger_count * (segments_per_finger + 1); }
    void validate() const;
};

kinematic_model default_hand();

struct joint_limits {
    double flexion_min = 0.0;
    double flexion_max = 100.0 * 3.14159265358979323846 / 180.0;
    double abduction_min = -20.0 * 3.14159265358979323846 / 180.0;
    double abduction_max = 20.0 * 3.14159265358979323846 / 180.0;
};

struct pose_params {
    vec3 global_rotation;     // axis-angle, radians
    vec3 global_translation;  // mm
    std::vector<double> flexion_angles;    // one per articulated segment, [finger][segment]
    std::vector<double> abduction_angles;  // one per finger root
};

// Throws naming the offending index when an angle is outside the limits.
void validate_pose(const kinematic_model& model, const pose_params& pose,
                   const joint_limits& limits = {});

struct joint_positions {
    std::vector<vec3> world;  // K entries

    dataio::joint_set in_frame(const camera_view& view) const;
};

// Forward kinematics: joint positions in the world frame.
joint_positions forward_kinematics(const kinematic_model& model, const pose_params& pose,
                                   const joint_limits& limits = {});

// Swept-sphere primitive; a == b yields a plain sphere.
struct capsule {
    vec3 a, b;
    double radius = 0.0;
};

// Capsule set for a posed model, in the world frame. Order: palm sphere
// first, then finger segments.
std::vector<capsule> build_capsules(const kinematic_model& model, const pose_params& pose,
                                    const joint_limits& limits = {});

double point_segment_distance(const vec3& p, const vec3& a, const vec3& b);
double segment_segment_distance(const vec3& p1, const vec3& q1, const vec3& p2, const vec3& q2);

// True when two non-adjacent capsules overlap.
bool self_intersects(const kinematic_model& model, const std::vector<capsule>& capsules);

// Analytic depth rendering: per-pixel distance along the optical axis to the
// nearest capsule surface. Background pixels are 0.
dataio::depth_image render_depth(const kinematic_model& model, const pose_params& pose,
                                 const camera_view& view);
dataio::depth_image render_capsules(const std::vector<capsule>& world_capsules,
                                    const camera_view& view);

struct generator_options {
    double orientation_range_rad = 1.2;  // max rotation angle about a random axis
    vec3 translation_min{-60.0, -60.0, 540.0};
    vec3 translation_max{60.0, 60.0, 660.0};
    double depth_noise_sigma_mm = 0.0;  // optional additive Gaussian noise, off by default
    int max_rejections = 10000;
};

// Default two-view rig: view 1 looks down +z at the working volume; view 2 is
// the same camera orbited 60 degrees about the vertical axis through the
// volume centre.
camera_rig default_rig(int height = 384, int width = 384, double fx = 430.0, double fy = 430.0,
                       double separation_deg = 60.0, double orbit_center_z = 600.0);

// Draws a pose for sample `index` from its own seed-derived stream, rejecting
// self-intersecting or out-of-frustum configurations.
pose_params sample_pose(const kinematic_model& model, const camera_rig& rig,
                        const generator_options& opts, std::uint64_t seed, std::uint64_t index);

// Renders n samples and writes a dataset (manifest + raw depth files) under
// out_path. Exactly ceil(labeled_fraction * n) samples carry annotations.
// Byte-identical for identical (model, rig, seed, n).
void generate_dataset(const kinematic_model& model, const camera_rig& rig, int n_samples,
                      double labeled_fraction, std::uint64_t seed,
                      const std::filesystem::path& out_path, const generator_options& opts = {},
                      const std::string& name = "synthetic");

}  // namespace preview::synthgen
