#include "gtt/baseline.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "gtt/error.hpp"

namespace gtt {

namespace {

Eigen::MatrixXd design(const Dataset& data, std::span<const std::size_t> rows,
                       const std::vector<std::size_t>& vocab, std::size_t width) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto i = static_cast<Eigen::Index>(r);
    x(i, 0) = 1.0;
    std::size_t offset = 1;
    for (std::size_t j = 0; j < vocab.size(); ++j) {
      const auto id = data.cat_ids[rows[r] * data.n_categorical + j];
      if (id < 0 || static_cast<std::size_t>(id) > vocab[j]) throw DataError("logistic regression: id out of range");
      x(i, static_cast<Eigen::Index>(offset + static_cast<std::size_t>(id))) = 1.0;
      offset += vocab[j] + 1;
    }
    for (std::size_t k = 0; k < data.n_continuous; ++k) {
      x(i, static_cast<Eigen::Index>(offset + k)) = data.cont[rows[r] * data.n_continuous + k];
    }
  }
  return x;
}

std::size_t width_of(const std::vector<std::size_t>& vocab, std::size_t c) {
  std::size_t w = 1 + c;
  for (std::size_t v : vocab) w += v + 1;
  return w;
}

}  // namespace

LogisticRegression LogisticRegression::fit(const Dataset& data, std::span<const std::size_t> rows,
                                           std::vector<std::size_t> vocab_sizes, double l2,
                                           std::size_t max_iterations) {
  if (vocab_sizes.size() != data.n_categorical) throw ShapeError("logistic regression: vocab does not match data");
  LogisticRegression lr;
  lr.vocab_sizes = std::move(vocab_sizes);
  lr.n_continuous = data.n_continuous;
  lr.l2 = l2;
  const std::size_t width = width_of(lr.vocab_sizes, lr.n_continuous);
  const Eigen::MatrixXd x = design(data, rows, lr.vocab_sizes, width);
  Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) y(static_cast<Eigen::Index>(r)) = data.labels[rows[r]];

  Eigen::VectorXd penalty = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(width), l2);
  penalty(0) = 0.0;
  Eigen::VectorXd w = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(width));
  for (; lr.iterations < max_iterations; ++lr.iterations) {
    const Eigen::VectorXd z = x * w;
    const Eigen::VectorXd p = z.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
    const Eigen::VectorXd curvature = p.array() * (1.0 - p.array());
    const Eigen::VectorXd grad = x.transpose() * (p - y) + penalty.cwiseProduct(w);
    Eigen::MatrixXd hessian = x.transpose() * curvature.asDiagonal() * x;
    hessian.diagonal() += penalty;
    hessian.diagonal().array() += 1e-10;
    const Eigen::VectorXd delta = hessian.ldlt().solve(grad);
    w -= delta;
    if (delta.lpNorm<Eigen::Infinity>() < 1e-10) break;
  }
  lr.weights.assign(w.data(), w.data() + w.size());
  return lr;
}

std::vector<double> LogisticRegression::decision(const Dataset& data, std::span<const std::size_t> rows) const {
  const std::size_t width = weights.size();
  const Eigen::MatrixXd x = design(data, rows, vocab_sizes, width);
  const Eigen::VectorXd z = x * Eigen::Map<const Eigen::VectorXd>(weights.data(), static_cast<Eigen::Index>(width));
  return {z.data(), z.data() + z.size()};
}

}  // namespace gtt
