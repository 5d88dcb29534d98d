#include <cmath>
#include <random>
#include <vector>

#include "core/metrics.hpp"
#include "doctest.h"

using namespace preview;
using namespace preview::metrics;

namespace {

struct random_set {
    std::vector<double> preds, gts;
    int frames, joints;
};

random_set make_random(std::mt19937_64& rng, int frames, int joints, double spread_mm) {
    std::uniform_real_distribution<double> pos(-200.0, 200.0);
    std::uniform_real_distribution<double> err(-spread_mm, spread_mm);
    random_set s;
    s.frames = frames;
    s.joints = joints;
    for (int i = 0; i < frames * joints * 3; ++i) {
        const double g = pos(rng);
        s.gts.push_back(g);
        s.preds.push_back(g + err(rng));
    }
    return s;
}

}  // namespace

TEST_CASE("mean_joint_error basics") {
    std::vector<double> gt = {0, 0, 0};
    std::vector<double> pred = gt;
    CHECK(mean_joint_error(pred, gt, 1, 1) == doctest::Approx(0.0));

    pred = {3, 4, 0};
    CHECK(mean_joint_error(pred, gt, 1, 1) == doctest::Approx(5.0).epsilon(1e-12));

    std::vector<double> nan_pred = {std::nan(""), 0, 0};
    CHECK_THROWS_AS((void)mean_joint_error(nan_pred, gt, 1, 1), error);
    CHECK_THROWS_AS((void)mean_joint_error(pred, gt, 2, 1), error);
}

TEST_CASE("mean_joint_error matches double-loop oracle") {
    std::mt19937_64 rng(31);
    auto s = make_random(rng, 100, 10, 60.0);
    double brute = 0.0;
    for (int f = 0; f < s.frames; ++f)
        for (int k = 0; k < s.joints; ++k) {
            const size_t i = (size_t(f) * size_t(s.joints) + size_t(k)) * 3;
            const double dx = s.preds[i] - s.gts[i];
            const double dy = s.preds[i + 1] - s.gts[i + 1];
            const double dz = s.preds[i + 2] - s.gts[i + 2];
            brute += std::sqrt(dx * dx + dy * dy + dz * dz);
        }
    brute /= double(s.frames) * double(s.joints);
    CHECK(std::abs(mean_joint_error(s.preds, s.gts, s.frames, s.joints) - brute) <= 1e-9);
}

TEST_CASE("success curves definitions") {
    // 1 frame, 2 joints with errors 10 and 100 mm.
    std::vector<double> gt = {0, 0, 0, 0, 0, 0};
    std::vector<double> pred = {10, 0, 0, 100, 0, 0};
    curve js, fs;
    std::vector<double> thresholds = {80.0};
    success_curves(pred, gt, 1, 2, thresholds, js, fs);
    CHECK(js[0].second == doctest::Approx(0.5));
    CHECK(fs[0].second == doctest::Approx(0.0));

    // Perfect predictions: both curves constantly 1.
    success_curves(gt, gt, 1, 2, auc80_thresholds(), js, fs);
    for (const auto& [t, r] : js) CHECK(r == doctest::Approx(1.0));
    for (const auto& [t, r] : fs) CHECK(r == doctest::Approx(1.0));

    // Errors exactly 40 mm: step at the threshold, inclusive rule.
    std::vector<double> pred40 = {40, 0, 0, 0, 40, 0};
    std::vector<double> t0{39.0, 40.0, 41.0};
    success_curves(pred40, gt, 1, 2, t0, js, fs);
    CHECK(js[0].second == doctest::Approx(0.0));
    CHECK(js[1].second == doctest::Approx(1.0));
    CHECK(fs[1].second == doctest::Approx(1.0));

    CHECK_THROWS_AS(success_curves(pred, gt, 1, 2, std::vector<double>{}, js, fs), error);
    CHECK_THROWS_AS(success_curves(pred, gt, 1, 2, std::vector<double>{5.0, 5.0}, js, fs), error);
}

TEST_CASE("success curves match counting oracle") {
    std::mt19937_64 rng(32);
    auto s = make_random(rng, 100, 10, 60.0);
    auto thresholds = auc80_thresholds();
    curve js, fs;
    success_curves(s.preds, s.gts, s.frames, s.joints, thresholds, js, fs);

    std::vector<double> errors;
    for (int f = 0; f < s.frames; ++f)
        for (int k = 0; k < s.joints; ++k) {
            const size_t i = (size_t(f) * size_t(s.joints) + size_t(k)) * 3;
            const double dx = s.preds[i] - s.gts[i];
            const double dy = s.preds[i + 1] - s.gts[i + 1];
            const double dz = s.preds[i + 2] - s.gts[i + 2];
            errors.push_back(std::sqrt(dx * dx + dy * dy + dz * dz));
        }

    for (size_t ti = 0; ti < thresholds.size(); ++ti) {
        const double t = thresholds[ti];
        size_t jhit = 0, fhit = 0;
        for (int f = 0; f < s.frames; ++f) {
            bool all = true;
            for (int k = 0; k < s.joints; ++k) {
                if (errors[size_t(f) * size_t(s.joints) + size_t(k)] <= t)
                    ++jhit;
                else
                    all = false;
            }
            if (all) ++fhit;
        }
        CHECK(std::abs(js[ti].second - double(jhit) / 1000.0) <= 1e-9);
        CHECK(std::abs(fs[ti].second - double(fhit) / 100.0) <= 1e-9);
    }
}

TEST_CASE("auc80 closed forms") {
    curve ones, zeros;
    for (double t = 0.0; t <= 80.0; t += 1.0) {
        ones.emplace_back(t, 1.0);
        zeros.emplace_back(t, 0.0);
    }
    CHECK(auc80(ones) == doctest::Approx(1.0));
    CHECK(auc80(zeros) == doctest::Approx(0.0));

    // Uniform error of exactly 40 mm: a step from 0 to 1 at t = 40 on the
    // 1 mm trapezoid grid integrates to (40 intervals + half) / 80.
    std::vector<double> gt(30, 0.0), pred(30, 0.0);
    for (int k = 0; k < 10; ++k) pred[size_t(3 * k)] = 40.0;
    curve js, fs;
    success_curves(pred, gt, 1, 10, auc80_thresholds(), js, fs);
    const double expected = 40.5 / 80.0;
    CHECK(std::abs(auc80(js) - expected) <= 1e-6);
    CHECK(std::abs(auc80(js) - 0.5) <= 0.01);

    curve too_short = {{0.0, 1.0}, {50.0, 1.0}};
    CHECK_THROWS_AS((void)auc80(too_short), error);
}

TEST_CASE("evaluate invariants") {
    std::mt19937_64 rng(33);
    auto s = make_random(rng, 60, 10, 70.0);
    auto r = evaluate(s.preds, s.gts, s.frames, s.joints);

    CHECK(r.frame_count == 60);
    CHECK(r.joint_count == 10);
    CHECK(r.js80 >= 0.0);
    CHECK(r.js80 <= 1.0);
    // The all-joints criterion is stricter at every threshold.
    for (size_t i = 0; i < r.js_curve.size(); ++i)
        CHECK(r.fs_curve[i].second <= r.js_curve[i].second + 1e-12);
    CHECK(r.fs80 <= r.js80 + 1e-12);
    // Curves are non-decreasing in the threshold.
    for (size_t i = 1; i < r.js_curve.size(); ++i) {
        CHECK(r.js_curve[i].second >= r.js_curve[i - 1].second - 1e-12);
        CHECK(r.fs_curve[i].second >= r.fs_curve[i - 1].second - 1e-12);
    }

    // Frame permutation changes nothing.
    std::vector<double> preds2 = s.preds, gts2 = s.gts;
    const size_t stride = size_t(s.joints) * 3;
    for (int f = 0; f < s.frames / 2; ++f) {
        const size_t a = size_t(f) * stride, b = size_t(s.frames - 1 - f) * stride;
        for (size_t i = 0; i < stride; ++i) {
            std::swap(preds2[a + i], preds2[b + i]);
            std::swap(gts2[a + i], gts2[b + i]);
        }
    }
    auto r2 = evaluate(preds2, gts2, s.frames, s.joints);
    CHECK(r2.me_mm == doctest::Approx(r.me_mm).epsilon(1e-12));
    CHECK(r2.js80 == doctest::Approx(r.js80).epsilon(1e-12));
    CHECK(r2.fs80 == doctest::Approx(r.fs80).epsilon(1e-12));

    // Pooling identity: ME equals the mean of per-frame MEs for uniform K.
    double frame_me_sum = 0.0;
    for (int f = 0; f < s.frames; ++f) {
        std::vector<double> fp(s.preds.begin() + ptrdiff_t(size_t(f) * stride),
                               s.preds.begin() + ptrdiff_t(size_t(f + 1) * stride));
        std::vector<double> fg(s.gts.begin() + ptrdiff_t(size_t(f) * stride),
                               s.gts.begin() + ptrdiff_t(size_t(f + 1) * stride));
        frame_me_sum += mean_joint_error(fp, fg, 1, s.joints);
    }
    CHECK(r.me_mm == doctest::Approx(frame_me_sum / double(s.frames)).epsilon(1e-12));
}
