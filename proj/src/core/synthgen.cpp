#include "core/synthgen.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "core/rng.hpp"

namespace preview::synthgen {

void kinematic_model::validate() const {
    require(finger_count >= 1 && segments_per_finger >= 1, errc::config,
            "kinematic_model: needs at least one finger with one segment");
    const size_t expected = size_t(finger_count) * size_t(segments_per_finger);
    require(segment_lengths.size() == expected && segment_radii.size() == expected, errc::config,
            "kinematic_model: segment_lengths/segment_radii must hold one entry per segment");
    for (double l : segment_lengths)
        require(l > 0.0, errc::config, "kinematic_model: segment lengths must be positive");
    for (double r : segment_radii)
        require(r > 0.0, errc::config, "kinematic_model: segment radii must be positive");
    require(palm_radius > 0.0, errc::config, "kinematic_model: palm radius must be positive");
    require(joint_count() >= 4, errc::config, "kinematic_model: joint count must be >= 4");
}

kinematic_model default_hand() {
    kinematic_model m;
    m.finger_count = 3;
    m.segments_per_finger = 2;
    // Slightly uneven fingers so silhouettes break symmetry; short, thick
    // segments keep the hand well inside the 300 mm crop cube while filling
    // a reasonable share of it.
    m.segment_lengths = {55.0, 42.0, 62.0, 47.0, 55.0, 42.0};
    m.segment_radii = {15.0, 12.0, 15.0, 12.0, 15.0, 12.0};
    m.palm_radius = 60.0;
    m.finger_spread_rad = 0.62;
    return m;
}

void validate_pose(const kinematic_model& model, const pose_params& pose,
                   const joint_limits& limits) {
    const size_t segs = size_t(model.finger_count) * size_t(model.segments_per_finger);
    require(pose.flexion_angles.size() == segs, errc::config,
            "pose: expected one flexion angle per segment");
    require(pose.abduction_angles.size() == size_t(model.finger_count), errc::config,
            "pose: expected one abduction angle per finger");
    for (size_t i = 0; i < segs; ++i) {
        double a = pose.flexion_angles[i];
        require(a >= limits.flexion_min && a <= limits.flexion_max, errc::config,
                "pose: flexion angle " + std::to_string(i) + " outside joint limits");
    }
    for (size_t i = 0; i < pose.abduction_angles.size(); ++i) {
        double a = pose.abduction_angles[i];
        require(a >= limits.abduction_min && a <= limits.abduction_max, errc::config,
                "pose: abduction angle " + std::to_string(i) + " outside joint limits");
    }
}

namespace {

// Chain frames in the model frame: palm centre at the origin, palm normal
// +z, fingers fanned about +y in the x-y plane. Flexion curls towards +z.
struct chain_point {
    vec3 position;
    mat3 frame;
};

double base_yaw(const kinematic_model& model, int finger) {
    return model.finger_spread_rad * (double(finger) - 0.5 * double(model.finger_count - 1));
}

}  // namespace

joint_positions forward_kinematics(const kinematic_model& model, const pose_params& pose,
                                   const joint_limits& limits) {
    validate_pose(model, pose, limits);
    const mat3 Rg = axis_angle_to_mat3(pose.global_rotation);
    const vec3 tg = pose.global_translation;

    joint_positions out;
    out.world.reserve(size_t(model.joint_count()));
    out.world.push_back(Rg * vec3{0, 0, 0} + tg);  // palm centre

    for (int f = 0; f < model.finger_count; ++f) {
        const double yaw = base_yaw(model, f);
        vec3 root = rot_z(yaw) * vec3{0, model.palm_radius, 0};
        mat3 frame = rot_z(yaw + pose.abduction_angles[size_t(f)]);
        out.world.push_back(Rg * root + tg);
        vec3 p = root;
        for (int s = 0; s < model.segments_per_finger; ++s) {
            const size_t idx = size_t(f) * size_t(model.segments_per_finger) + size_t(s);
            frame = frame * rot_x(pose.flexion_angles[idx]);
            p = p + frame * vec3{0, model.segment_lengths[idx], 0};
            out.world.push_back(Rg * p + tg);
        }
    }
    return out;
}

dataio::joint_set joint_positions::in_frame(const camera_view& view) const {
    dataio::joint_set js;
    js.positions.reserve(world.size() * 3);
    for (const auto& p : world) {
        vec3 c = view.to_camera(p);
        js.positions.push_back(c.x);
        js.positions.push_back(c.y);
        js.positions.push_back(c.z);
    }
    return js;
}

std::vector<capsule> build_capsules(const kinematic_model& model, const pose_params& pose,
                                    const joint_limits& limits) {
    auto joints = forward_kinematics(model, pose, limits);
    std::vector<capsule> caps;
    caps.push_back({joints.world[0], joints.world[0], model.palm_radius});
    size_t j = 1;
    for (int f = 0; f < model.finger_count; ++f) {
        for (int s = 0; s < model.segments_per_finger; ++s) {
            const size_t idx = size_t(f) * size_t(model.segments_per_finger) + size_t(s);
            caps.push_back({joints.world[j], joints.world[j + 1], model.segment_radii[idx]});
            ++j;
        }
        ++j;  // skip to the next finger's root
    }
    return caps;
}

double point_segment_distance(const vec3& p, const vec3& a, const vec3& b) {
    vec3 ab = b - a;
    double denom = dot(ab, ab);
    double t = denom > 0 ? std::clamp(dot(p - a, ab) / denom, 0.0, 1.0) : 0.0;
    return norm(p - (a + ab * t));
}

double segment_segment_distance(const vec3& p1, const vec3& q1, const vec3& p2, const vec3& q2) {
    // Closest distance between segments [p1,q1] and [p2,q2] (Ericson-style
    // clamped solve).
    vec3 d1 = q1 - p1, d2 = q2 - p2, r = p1 - p2;
    double a = dot(d1, d1), e = dot(d2, d2), f = dot(d2, r);
    double s, t;
    if (a <= 1e-12 && e <= 1e-12) return norm(r);
    if (a <= 1e-12) {
        s = 0.0;
        t = std::clamp(f / e, 0.0, 1.0);
    } else {
        double c = dot(d1, r);
        if (e <= 1e-12) {
            t = 0.0;
            s = std::clamp(-c / a, 0.0, 1.0);
        } else {
            double b = dot(d1, d2);
            double denom = a * e - b * b;
            s = denom > 1e-12 ? std::clamp((b * f - c * e) / denom, 0.0, 1.0) : 0.0;
            t = (b * s + f) / e;
            if (t < 0.0) {
                t = 0.0;
                s = std::clamp(-c / a, 0.0, 1.0);
            } else if (t > 1.0) {
                t = 1.0;
                s = std::clamp((b - c) / a, 0.0, 1.0);
            }
        }
    }
    return norm((p1 + d1 * s) - (p2 + d2 * t));
}

bool self_intersects(const kinematic_model& model, const std::vector<capsule>& capsules) {
    const int S = model.segments_per_finger;
    // Capsule 0 is the palm; capsule 1 + f*S + s is segment s of finger f.
    auto adjacent = [&](size_t i, size_t j) {
        if (i > j) std::swap(i, j);
        if (i == 0) return (j - 1) % size_t(S) == 0;  // palm touches each finger's first segment
        size_t fi = (i - 1) / size_t(S), fj = (j - 1) / size_t(S);
        return fi == fj && j == i + 1;  // consecutive segments share a joint
    };
    for (size_t i = 0; i < capsules.size(); ++i) {
        for (size_t j = i + 1; j < capsules.size(); ++j) {
            if (adjacent(i, j)) continue;
            double d = segment_segment_distance(capsules[i].a, capsules[i].b, capsules[j].a,
                                                capsules[j].b);
            if (d < capsules[i].radius + capsules[j].radius) return true;
        }
    }
    return false;
}

namespace {

constexpr double k_min_hit_depth = 10.0;  // mm; rays start well outside the object

// Nearest intersection of the ray p(t) = t*d (d.z == 1) with a capsule in the
// camera frame. Returns the depth t, or +inf when the ray misses.
double ray_capsule_depth(const vec3& d, const capsule& c) {
    double best = std::numeric_limits<double>::infinity();
    if (c.radius <= 0.0) return best;

    auto sphere_hit = [&](const vec3& centre) {
        double A = dot(d, d);
        double B = -2.0 * dot(d, centre);
        double C = dot(centre, centre) - c.radius * c.radius;
        double disc = B * B - 4.0 * A * C;
        if (disc < 0.0) return;
        double t = (-B - std::sqrt(disc)) / (2.0 * A);
        if (t > k_min_hit_depth && t < best) best = t;
    };

    vec3 ab = c.b - c.a;
    double len2 = dot(ab, ab);
    if (len2 <= 1e-12) {
        sphere_hit(c.a);
        return best;
    }
    vec3 u = ab * (1.0 / std::sqrt(len2));
    vec3 m = d - u * dot(d, u);
    vec3 oc = c.a * -1.0;
    vec3 n = oc - u * dot(oc, u);
    double A = dot(m, m);
    if (A > 1e-14) {
        double B = 2.0 * dot(m, n);
        double C = dot(n, n) - c.radius * c.radius;
        double disc = B * B - 4.0 * A * C;
        if (disc >= 0.0) {
            double t = (-B - std::sqrt(disc)) / (2.0 * A);
            if (t > k_min_hit_depth) {
                double s = dot(d * t - c.a, u);
                if (s >= 0.0 && s * s <= len2 && t < best) best = t;
            }
        }
    }
    sphere_hit(c.a);
    sphere_hit(c.b);
    return best;
}

}  // namespace

dataio::depth_image render_capsules(const std::vector<capsule>& world_capsules,
                                    const camera_view& view) {
    require(view.fx != 0.0 && view.fy != 0.0, errc::config,
            "render: degenerate intrinsics (fx or fy is zero)");
    require(view.height > 0 && view.width > 0, errc::config, "render: empty image");

    // Camera-frame capsules plus bounding spheres for the per-pixel cull.
    struct prepared {
        capsule c;
        vec3 centre;
        double radius;
    };
    std::vector<prepared> caps;
    caps.reserve(world_capsules.size());
    for (const auto& wc : world_capsules) {
        if (wc.radius <= 0.0) continue;
        prepared p;
        p.c = {view.to_camera(wc.a), view.to_camera(wc.b), wc.radius};
        p.centre = (p.c.a + p.c.b) * 0.5;
        p.radius = 0.5 * norm(p.c.b - p.c.a) + wc.radius;
        caps.push_back(p);
    }

    dataio::depth_image img;
    img.height = view.height;
    img.width = view.width;
    img.values.assign(img.pixel_count(), 0.0f);
    if (caps.empty()) return img;

#pragma omp parallel for schedule(static)
    for (int r = 0; r < view.height; ++r) {
        for (int c = 0; c < view.width; ++c) {
            vec3 d{(double(c) - view.cx) / view.fx, (double(r) - view.cy) / view.fy, 1.0};
            double dn = norm(d);
            double depth = std::numeric_limits<double>::infinity();
            for (const auto& cap : caps) {
                // Distance from the ray to the bounding-sphere centre.
                double axial = dot(cap.centre, d) / (dn * dn);
                if (axial < 0.0) continue;
                if (norm(cap.centre - d * axial) > cap.radius) continue;
                depth = std::min(depth, ray_capsule_depth(d, cap.c));
            }
            if (std::isfinite(depth)) img.at(r, c) = float(depth);
        }
    }
    return img;
}

dataio::depth_image render_depth(const kinematic_model& model, const pose_params& pose,
                                 const camera_view& view) {
    return render_capsules(build_capsules(model, pose), view);
}

camera_rig default_rig(int height, int width, double fx, double fy, double separation_deg,
                       double orbit_center_z) {
    camera_rig rig;
    camera_view v1;
    v1.id = "v1";
    v1.fx = fx;
    v1.fy = fy;
    v1.cx = width / 2.0;
    v1.cy = height / 2.0;
    v1.height = height;
    v1.width = width;
    rig.views.push_back(v1);

    // View 2: the same camera orbited about the vertical axis through the
    // working-volume centre.
    camera_view v2 = v1;
    v2.id = "v2";
    const double theta = separation_deg * 3.14159265358979323846 / 180.0;
    const vec3 pivot{0.0, 0.0, orbit_center_z};
    mat3 R = rot_y(-theta);
    v2.extrinsics.R = R;
    v2.extrinsics.t = pivot - R * pivot;
    rig.views.push_back(v2);
    return rig;
}

namespace {

bool capsules_in_frustum(const std::vector<capsule>& caps, const camera_view& view,
                         double margin_px) {
    for (const auto& c : caps) {
        vec3 centre = view.to_camera((c.a + c.b) * 0.5);
        double radius = 0.5 * norm(c.b - c.a) + c.radius;
        if (centre.z - radius < 100.0) return false;
        double ur = view.fx * radius / centre.z;
        double vr = view.fy * radius / centre.z;
        auto [u, v] = view.project(centre);
        if (u - ur < margin_px || u + ur > view.width - 1 - margin_px) return false;
        if (v - vr < margin_px || v + vr > view.height - 1 - margin_px) return false;
    }
    return true;
}

bool joints_visible(const joint_positions& joints, const camera_rig& rig) {
    for (const auto& p : joints.world) {
        bool seen = false;
        for (const auto& view : rig.views) {
            vec3 c = view.to_camera(p);
            if (c.z <= 0.0) continue;
            auto [u, v] = view.project(c);
            seen |= view.inside(u, v);
        }
        if (!seen) return false;
    }
    return true;
}

}  // namespace

pose_params sample_pose(const kinematic_model& model, const camera_rig& rig,
                        const generator_options& opts, std::uint64_t seed, std::uint64_t index) {
    joint_limits limits;
    rng64 rng(derive_seed(seed, "pose", index));
    const size_t segs = size_t(model.finger_count) * size_t(model.segments_per_finger);

    for (int attempt = 0; attempt < opts.max_rejections; ++attempt) {
        pose_params pose;
        vec3 axis{rng.normal(), rng.normal(), rng.normal()};
        double angle = rng.uniform(0.0, opts.orientation_range_rad);
        pose.global_rotation = normalized(axis) * angle;
        pose.global_translation = {rng.uniform(opts.translation_min.x, opts.translation_max.x),
                                   rng.uniform(opts.translation_min.y, opts.translation_max.y),
                                   rng.uniform(opts.translation_min.z, opts.translation_max.z)};
        pose.flexion_angles.resize(segs);
        for (auto& a : pose.flexion_angles) a = rng.uniform(limits.flexion_min, limits.flexion_max);
        pose.abduction_angles.resize(size_t(model.finger_count));
        for (auto& a : pose.abduction_angles)
            a = rng.uniform(limits.abduction_min, limits.abduction_max);

        auto caps = build_capsules(model, pose, limits);
        if (self_intersects(model, caps)) continue;
        bool ok = true;
        for (const auto& view : rig.views) ok = ok && capsules_in_frustum(caps, view, 1.0);
        if (!ok) continue;
        if (!joints_visible(forward_kinematics(model, pose, limits), rig)) continue;
        return pose;
    }
    throw_config("sample_pose: rejection sampling failed for sample " + std::to_string(index) +
                 "; widen the translation/orientation ranges");
}

void generate_dataset(const kinematic_model& model, const camera_rig& rig, int n_samples,
                      double labeled_fraction, std::uint64_t seed,
                      const std::filesystem::path& out_path, const generator_options& opts,
                      const std::string& name) {
    model.validate();
    require(n_samples >= 1, errc::config, "generate_dataset: n_samples must be >= 1");
    require(labeled_fraction >= 0.0 && labeled_fraction <= 1.0, errc::config,
            "generate_dataset: labeled_fraction must be within [0, 1]");
    require(rig.views.size() == 2, errc::config, "generate_dataset: rig must have two views");

    std::error_code ec;
    std::filesystem::create_directories(out_path / "depth", ec);
    if (ec) throw_io("cannot create dataset directory: " + (out_path / "depth").string());

    const int labeled_count = int(std::ceil(labeled_fraction * double(n_samples) - 1e-9));
    std::vector<dataio::sample_record> records(static_cast<size_t>(n_samples));

#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < n_samples; ++i) {
        auto pose = sample_pose(model, rig, opts, seed, std::uint64_t(i));
        auto joints = forward_kinematics(model, pose);
        auto caps = build_capsules(model, pose);

        char id_buf[16];
        std::snprintf(id_buf, sizeof(id_buf), "s%06d", i);
        dataio::sample_record rec;
        rec.id = id_buf;

        for (size_t v = 0; v < rig.views.size(); ++v) {
            auto img = render_capsules(caps, rig.views[v]);
            if (opts.depth_noise_sigma_mm > 0.0) {
                rng64 noise(derive_seed(seed, "noise", std::uint64_t(i) * 7919 + v));
                for (auto& val : img.values)
                    if (val > 0.0f)
                        val = std::max(1e-3f,
                                       noise.normal_f(val, float(opts.depth_noise_sigma_mm)));
            }
            std::string rel = "depth/" + rec.id + "_" + rig.views[v].id + ".f32";
            dataio::write_depth_raw(out_path / rel, img);
            rec.files[rig.views[v].id] = rel;
        }

        if (i < labeled_count) {
            rec.labeled = true;
            rec.joints = joints.in_frame(rig.views[0]);
        }
        records[size_t(i)] = std::move(rec);
    }

    dataio::manifest m;
    m.name = name;
    m.num_samples = n_samples;
    m.height = rig.views[0].height;
    m.width = rig.views[0].width;
    m.rig = rig;
    m.samples = std::move(records);

    std::ofstream f(out_path / "manifest.json", std::ios::binary);
    if (!f) throw_io("cannot write manifest: " + (out_path / "manifest.json").string());
    f << manifest_to_json(m);
    if (!f) throw_io("manifest write failed");
}

}  // namespace preview::synthgen
