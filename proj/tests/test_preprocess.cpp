#include <cmath>

#include "core/preprocess.hpp"
#include "core/synthgen.hpp"
#include "core/trainer.hpp"
#include "doctest.h"

using namespace preview;
using namespace preview::preprocess;

namespace {

camera_view simple_view() {
    camera_view v;
    v.id = "v1";
    v.fx = v.fy = 100.0;
    v.cx = v.cy = 48.0;
    v.height = v.width = 96;
    return v;
}

dataio::depth_image blank(int h, int w) {
    dataio::depth_image img;
    img.height = h;
    img.width = w;
    img.values.assign(size_t(h) * size_t(w), 0.0f);
    return img;
}

}  // namespace

TEST_CASE("compute_com back-projects the principal point") {
    auto view = simple_view();
    auto img = blank(96, 96);
    img.at(48, 48) = 500.0f;  // pixel exactly at (cx, cy)
    const vec3 com = compute_com(img, view);
    CHECK(com.x == doctest::Approx(0.0));
    CHECK(com.y == doctest::Approx(0.0));
    CHECK(com.z == doctest::Approx(500.0));
}

TEST_CASE("compute_com averages back-projected points") {
    auto view = simple_view();
    auto img = blank(96, 96);
    // Pixels back-projecting to (-10, 0, 500) and (10, 0, 500):
    // u = cx -+ fx*10/500 = 48 -+ 2.
    img.at(48, 46) = 500.0f;
    img.at(48, 50) = 500.0f;
    const vec3 com = compute_com(img, view);
    CHECK(com.x == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(com.y == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(com.z == doctest::Approx(500.0));
}

TEST_CASE("compute_com rejects empty frames and matches a brute-force oracle") {
    auto view = simple_view();
    CHECK_THROWS_AS((void)compute_com(blank(96, 96), view), error);

    auto model = synthgen::default_hand();
    auto rig = synthgen::default_rig(128, 128, 143.0, 143.0);
    synthgen::generator_options opts;
    auto pose = synthgen::sample_pose(model, rig, opts, 88, 0);
    auto img = synthgen::render_depth(model, pose, rig.views[0]);

    const double band = 200.0;
    float zmin = 1e30f;
    for (float v : img.values)
        if (v > 0) zmin = std::min(zmin, v);
    vec3 acc{0, 0, 0};
    size_t n = 0;
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c) {
            const float z = img.at(r, c);
            if (z <= 0 || double(z) > double(zmin) + band) continue;
            acc += rig.views[0].backproject(double(c), double(r), double(z));
            ++n;
        }
    const vec3 oracle = acc * (1.0 / double(n));
    const vec3 com = compute_com(img, rig.views[0], band);
    CHECK(std::abs(com.x - oracle.x) <= 1e-6);
    CHECK(std::abs(com.y - oracle.y) <= 1e-6);
    CHECK(std::abs(com.z - oracle.z) <= 1e-6);
}

TEST_CASE("foreground band drops distant structures") {
    auto view = simple_view();
    auto img = blank(96, 96);
    img.at(40, 40) = 500.0f;
    img.at(50, 50) = 900.0f;  // 400 mm behind the closest point
    const vec3 com = compute_com(img, view, 200.0);
    CHECK(com.z == doctest::Approx(500.0));
}

TEST_CASE("crop normalization endpoints") {
    auto view = simple_view();
    auto img = blank(96, 96);
    const double com_z = 600.0;
    // Center pixel at CoM depth, two neighbours at the clamp endpoints.
    img.at(48, 48) = float(com_z);
    img.at(48, 50) = float(com_z + 150.0);        // +1 exactly
    img.at(48, 46) = float(com_z - 2.0 * 150.0);  // clamped to -1
    auto crop = crop_and_normalize(img, view, {0, 0, com_z}, 300.0, 150.0);

    CHECK(crop.pixels[32 * 64 + 32] == doctest::Approx(0.0));
    float mn = 2.0f, mx = -2.0f;
    bool saw_minus_one = false, saw_plus_one_fg = false;
    for (int r = 0; r < 64; ++r)
        for (int c = 0; c < 64; ++c) {
            const float v = crop.pixels[size_t(r) * 64 + size_t(c)];
            mn = std::min(mn, v);
            mx = std::max(mx, v);
            if (v == doctest::Approx(-1.0f)) saw_minus_one = true;
            if (v == doctest::Approx(1.0f)) saw_plus_one_fg = true;
        }
    CHECK(mn >= -1.0f);
    CHECK(mx <= 1.0f);
    CHECK(saw_minus_one);
    CHECK(saw_plus_one_fg);
    CHECK(crop.meta.crop_cube_side_mm == doctest::Approx(300.0));
}

TEST_CASE("crop fully outside the image errors") {
    auto view = simple_view();
    auto img = blank(96, 96);
    img.at(48, 48) = 600.0f;
    CHECK_THROWS_AS(
        (void)crop_and_normalize(img, view, {10000.0, 0.0, 600.0}, 300.0, 150.0), error);
}

TEST_CASE("synthetic crop stays within range and matches background fraction") {
    auto model = synthgen::default_hand();
    auto rig = synthgen::default_rig(128, 128, 143.0, 143.0);
    synthgen::generator_options opts;
    auto pose = synthgen::sample_pose(model, rig, opts, 914, 0);
    auto img = synthgen::render_depth(model, pose, rig.views[0]);
    crop_params params;
    auto crop = preprocess_view(img, rig.views[0], params);

    // Recompute the background fraction from the source window.
    const vec3 com = compute_com(img, rig.views[0], params.foreground_band_mm);
    size_t bg = 0;
    for (float v : crop.pixels) {
        CHECK(v >= -1.0f);
        CHECK(v <= 1.0f);
        if (v == 1.0f) ++bg;
    }
    // Oracle: sample the same window grid directly.
    auto [u0, v0] = rig.views[0].project(com);
    const double hu = rig.views[0].fx * (params.crop_cube_side_mm / 2.0) / com.z;
    const double hv = rig.views[0].fy * (params.crop_cube_side_mm / 2.0) / com.z;
    size_t bg_oracle = 0;
    for (int r = 0; r < 64; ++r)
        for (int c = 0; c < 64; ++c) {
            const double u = u0 - hu + (c + 0.5) * (2.0 * hu / 64);
            const double v = v0 - hv + (r + 0.5) * (2.0 * hv / 64);
            const long sr = std::lround(v), sc = std::lround(u);
            bool background = true;
            if (sr >= 0 && sr < img.height && sc >= 0 && sc < img.width) {
                const float z = img.at(int(sr), int(sc));
                if (z > 0.0f && double(z) < com.z + params.depth_range_mm) background = false;
            }
            if (background) ++bg_oracle;
        }
    CHECK(std::abs(double(bg) - double(bg_oracle)) / 4096.0 <= 0.02);
}

TEST_CASE("translation equivariance") {
    auto model = synthgen::default_hand();
    // Far placement keeps the perspective change of a 20 mm shift within the
    // invariant's tolerance.
    auto rig = synthgen::default_rig(256, 256, 290.0, 290.0, 60.0, 900.0);
    synthgen::generator_options opts;
    opts.translation_min = {-40.0, -40.0, 850.0};
    opts.translation_max = {40.0, 40.0, 950.0};
    auto pose = synthgen::sample_pose(model, rig, opts, 915, 1);
    crop_params params;

    auto img_a = synthgen::render_depth(model, pose, rig.views[0]);
    const vec3 com_a = compute_com(img_a, rig.views[0], params.foreground_band_mm);
    auto crop_a = preprocess_view(img_a, rig.views[0], params);

    auto shifted = pose;
    shifted.global_translation.x += 20.0;
    auto img_b = synthgen::render_depth(model, shifted, rig.views[0]);
    const vec3 com_b = compute_com(img_b, rig.views[0], params.foreground_band_mm);
    auto crop_b = preprocess_view(img_b, rig.views[0], params);

    CHECK(std::abs(com_b.x - com_a.x - 20.0) <= 1.0);
    CHECK(std::abs(com_b.y - com_a.y) <= 1.0);
    CHECK(std::abs(com_b.z - com_a.z) <= 1.0);

    double mean_abs = 0.0;
    for (size_t i = 0; i < crop_a.pixels.size(); ++i)
        mean_abs += std::abs(double(crop_a.pixels[i]) - double(crop_b.pixels[i]));
    mean_abs /= double(crop_a.pixels.size());
    CHECK(mean_abs <= 0.05);
}

TEST_CASE("compute_com is permutation invariant") {
    auto view = simple_view();
    auto img = blank(96, 96);
    img.at(10, 20) = 520.0f;
    img.at(70, 30) = 540.0f;
    img.at(33, 80) = 560.0f;
    const vec3 a = compute_com(img, view);

    // Permute pixel positions: the reduction only sees the multiset of
    // (pixel, depth) pairs, so relabeling iteration order cannot matter;
    // verify by transposing the image and the intrinsics.
    auto transposed = blank(96, 96);
    for (int r = 0; r < 96; ++r)
        for (int c = 0; c < 96; ++c) transposed.at(c, r) = img.at(r, c);
    const vec3 b = compute_com(transposed, view);
    CHECK(a.x == doctest::Approx(b.y));
    CHECK(a.y == doctest::Approx(b.x));
    CHECK(a.z == doctest::Approx(b.z));
}

TEST_CASE("augmentations are deterministic, bounded and off by default") {
    // Build a tiny on-disk dataset once.
    auto model = synthgen::default_hand();
    auto rig = synthgen::default_rig(96, 96, 110.0, 110.0);
    auto dir = std::filesystem::temp_directory_path() / "preview_test_aug";
    std::filesystem::remove_all(dir);
    synthgen::generate_dataset(model, rig, 4, 1.0, 3, dir);
    auto ds = preview::dataio::dataset::load(dir / "manifest.json");
    preview::dataio::dataset_split split;
    for (const auto& id : ds.labeled_ids()) split.train_labeled.push_back(id);
    preview::dataio::split_view view(ds, split);

    crop_params plain;
    auto base = preview::trainer::prepare_dataset(view, plain);

    crop_params aug;
    aug.com_jitter_mm = 30.0;
    aug.jitter_seed = 9;
    aug.dropout_holes = 3;
    auto a = preview::trainer::prepare_dataset(view, aug);
    auto b = preview::trainer::prepare_dataset(view, aug);

    for (size_t i = 0; i < a.samples.size(); ++i) {
        // Deterministic in the seed.
        CHECK(a.samples[i].crop1 == b.samples[i].crop1);
        CHECK(a.samples[i].com1.x == b.samples[i].com1.x);
        // Anchor moved within bounds, crops stay in range.
        CHECK(std::abs(a.samples[i].com1.x - base.samples[i].com1.x) <= 30.0);
        CHECK(std::abs(a.samples[i].com1.z - base.samples[i].com1.z) <= 30.0);
        for (float v : a.samples[i].crop1) {
            CHECK(v >= -1.0f);
            CHECK(v <= 1.0f);
        }

        // Targets follow the perturbed anchor.
        if (a.samples[i].labeled) {
            const double hs = aug.crop_cube_side_mm / 2.0;
            const double expect =
                (a.samples[i].joints_mm[0] - a.samples[i].com1.x) / hs;
            CHECK(a.samples[i].target_norm[0] == doctest::Approx(expect).epsilon(1e-5));
        }
    }

    // Holes blank pixels to background: across the set there are strictly
    // more +1 pixels than in a jitter-only preparation.
    {
        crop_params jitter_only = aug;
        jitter_only.dropout_holes = 0;
        auto j = preview::trainer::prepare_dataset(view, jitter_only);
        size_t bg_with = 0, bg_without = 0;
        for (size_t i = 0; i < a.samples.size(); ++i) {
            for (float v : a.samples[i].crop1) bg_with += v == 1.0f;
            for (float v : j.samples[i].crop1) bg_without += v == 1.0f;
        }
        CHECK(bg_with > bg_without);
    }

    // Defaults leave the data untouched.
    auto again = preview::trainer::prepare_dataset(view, plain);
    for (size_t i = 0; i < base.samples.size(); ++i)
        CHECK(base.samples[i].crop1 == again.samples[i].crop1);
    std::filesystem::remove_all(dir);
}
