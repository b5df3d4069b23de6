#include "gtt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "gtt/error.hpp"

namespace gtt {

std::vector<RocPoint> roc_points(std::span<const double> scores, std::span<const double> labels) {
  if (scores.size() != labels.size()) {
    throw DataError("auroc: " + std::to_string(scores.size()) + " scores vs " + std::to_string(labels.size()) +
                    " labels");
  }
  std::size_t positives = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) throw DataError("auroc: non-finite score at index " + std::to_string(i));
    if (labels[i] != 0.0 && labels[i] != 1.0) throw DataError("auroc: labels must be 0 or 1");
    positives += labels[i] == 1.0;
  }
  const std::size_t negatives = scores.size() - positives;
  if (positives == 0 || negatives == 0) throw DataError("auroc: undefined with a single class");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  std::vector<RocPoint> points{{0.0, 0.0}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == s; ++i) {
      if (labels[order[i]] == 1.0) ++tp;
      else ++fp;
    }
    points.push_back({static_cast<double>(fp) / static_cast<double>(negatives),
                      static_cast<double>(tp) / static_cast<double>(positives)});
  }
  return points;
}

double trapezoid_area(std::span<const RocPoint> points) {
  double area = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    area += (points[i].fpr - points[i - 1].fpr) * (points[i].tpr + points[i - 1].tpr) * 0.5;
  }
  return area;
}

double auroc(std::span<const double> scores, std::span<const double> labels) {
  const auto points = roc_points(scores, labels);
  return trapezoid_area(points);
}

}  // namespace gtt
