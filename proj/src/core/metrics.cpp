#include "core/metrics.hpp"

#include <cmath>

namespace preview::metrics {

namespace {

void check_shapes(std::span<const double> preds, std::span<const double> gts, int frames,
                  int joint_count) {
    require(frames > 0 && joint_count > 0, errc::config, "metrics: empty prediction set");
    const size_t n = size_t(frames) * size_t(joint_count) * 3;
    require(preds.size() == n && gts.size() == n, errc::config, "metrics: shape mismatch");
    for (size_t i = 0; i < n; ++i)
        require(std::isfinite(preds[i]) && std::isfinite(gts[i]), errc::numeric,
                "metrics: non-finite joint position");
}

double joint_error(std::span<const double> preds, std::span<const double> gts, size_t idx) {
    double dx = preds[idx] - gts[idx];
    double dy = preds[idx + 1] - gts[idx + 1];
    double dz = preds[idx + 2] - gts[idx + 2];
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

}  // namespace

double mean_joint_error(std::span<const double> preds, std::span<const double> gts, int frames,
                        int joint_count) {
    check_shapes(preds, gts, frames, joint_count);
    double acc = 0.0;
    for (size_t j = 0; j < size_t(frames) * size_t(joint_count); ++j)
        acc += joint_error(preds, gts, 3 * j);
    return acc / (double(frames) * double(joint_count));
}

void success_curves(std::span<const double> preds, std::span<const double> gts, int frames,
                    int joint_count, std::span<const double> thresholds, curve& js, curve& fs) {
    check_shapes(preds, gts, frames, joint_count);
    require(!thresholds.empty(), errc::config, "success_curves: empty threshold list");
    for (size_t i = 0; i < thresholds.size(); ++i) {
        require(thresholds[i] >= 0.0, errc::config, "success_curves: negative threshold");
        if (i > 0)
            require(thresholds[i] > thresholds[i - 1], errc::config,
                    "success_curves: thresholds must be strictly increasing");
    }

    std::vector<double> errors(size_t(frames) * size_t(joint_count));
    for (size_t j = 0; j < errors.size(); ++j) errors[j] = joint_error(preds, gts, 3 * j);

    js.clear();
    fs.clear();
    for (double t : thresholds) {
        size_t joint_hits = 0;
        size_t frame_hits = 0;
        for (int f = 0; f < frames; ++f) {
            bool all = true;
            for (int k = 0; k < joint_count; ++k) {
                double e = errors[size_t(f) * size_t(joint_count) + size_t(k)];
                if (e <= t)
                    ++joint_hits;
                else
                    all = false;
            }
            if (all) ++frame_hits;
        }
        js.emplace_back(t, double(joint_hits) / (double(frames) * double(joint_count)));
        fs.emplace_back(t, double(frame_hits) / double(frames));
    }
}

double auc80(const curve& c) {
    require(c.size() >= 2, errc::config, "auc80: curve too short");
    require(c.front().first <= 0.0 && c.back().first >= 80.0, errc::config,
            "auc80: curve must cover [0, 80] mm");
    double area = 0.0;
    for (size_t i = 0; i + 1 < c.size(); ++i) {
        double t0 = c[i].first, t1 = c[i + 1].first;
        if (t1 <= 0.0 || t0 >= 80.0) continue;
        double lo = std::max(t0, 0.0), hi = std::min(t1, 80.0);
        // Linear interpolation of the curve on the clipped interval.
        auto value_at = [&](double t) {
            return c[i].second + (c[i + 1].second - c[i].second) * (t - t0) / (t1 - t0);
        };
        area += 0.5 * (value_at(lo) + value_at(hi)) * (hi - lo);
    }
    return area / 80.0;
}

std::vector<double> auc80_thresholds() {
    std::vector<double> t(81);
    for (int i = 0; i <= 80; ++i) t[size_t(i)] = double(i);
    return t;
}

eval_report evaluate(std::span<const double> preds, std::span<const double> gts, int frames,
                     int joint_count) {
    eval_report r;
    r.frame_count = frames;
    r.joint_count = joint_count;
    r.me_mm = mean_joint_error(preds, gts, frames, joint_count);
    auto thresholds = auc80_thresholds();
    success_curves(preds, gts, frames, joint_count, thresholds, r.js_curve, r.fs_curve);
    r.js80 = auc80(r.js_curve);
    r.fs80 = auc80(r.fs_curve);
    return r;
}

}  // namespace preview::metrics
