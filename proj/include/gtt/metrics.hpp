#pragma once

#include <span>
#include <utility>
#include <vector>

namespace gtt {

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

// One point per distinct score threshold, from (0, 0) to (1, 1). Tied scores
// form a single step, so the trapezoid over a tie group counts each tied
// positive/negative pair as one half.
std::vector<RocPoint> roc_points(std::span<const double> scores, std::span<const double> labels);

// Trapezoidal area under a polyline of ROC points.
double trapezoid_area(std::span<const RocPoint> points);

// Throws DataError when only one class is present or a score is not finite.
double auroc(std::span<const double> scores, std::span<const double> labels);

}  // namespace gtt
