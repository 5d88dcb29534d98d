#pragma once

#include <span>
#include <utility>
#include <vector>

#include "core/common.hpp"

namespace preview::metrics {

// Success-rate curve point: (distance threshold in mm, success fraction).
using curve = std::vector<std::pair<double, double>>;

struct eval_report {
    double me_mm = 0.0;
    curve js_curve;
    curve fs_curve;
    double js80 = 0.0;
    double fs80 = 0.0;
    int frame_count = 0;
    int joint_count = 0;
};

// Mean over all frames and joints of the per-joint Euclidean distance.
// preds/gts are frames x K x 3, row-major, millimetres.
double mean_joint_error(std::span<const double> preds, std::span<const double> gts, int frames,
                        int joint_count);

// Joint-based and frame-based success rates at the given thresholds.
// Inclusive comparison: error <= threshold counts as a success.
void success_curves(std::span<const double> preds, std::span<const double> gts, int frames,
                    int joint_count, std::span<const double> thresholds, curve& js, curve& fs);

// Normalized area under a success curve over [0, 80] mm (trapezoidal rule).
// The curve must cover the full range.
double auc80(const curve& c);

// Thresholds 0, 1, ..., 80 mm; the grid all reported AUC values use.
std::vector<double> auc80_thresholds();

// Full evaluation: ME plus JS/FS curves on the 1 mm grid and their AUC80.
eval_report evaluate(std::span<const double> preds, std::span<const double> gts, int frames,
                     int joint_count);

}  // namespace preview::metrics
