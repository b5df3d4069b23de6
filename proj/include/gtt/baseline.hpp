#pragma once

#include <span>
#include <vector>

#include "gtt/data.hpp"

namespace gtt {

// L2-regularized logistic regression on one-hot categorical ids (unseen ids
// get their own indicator) and the z-scored continuous values, fitted by
// Newton's method. The intercept is not penalized.
struct LogisticRegression {
  std::vector<std::size_t> vocab_sizes;
  std::size_t n_continuous = 0;
  std::vector<double> weights;  // intercept first, then one-hot blocks, then continuous
  double l2 = 1.0;
  std::size_t iterations = 0;

  static LogisticRegression fit(const Dataset& data, std::span<const std::size_t> rows,
                                std::vector<std::size_t> vocab_sizes, double l2 = 1.0,
                                std::size_t max_iterations = 50);
  std::vector<double> decision(const Dataset& data, std::span<const std::size_t> rows) const;
};

}  // namespace gtt
