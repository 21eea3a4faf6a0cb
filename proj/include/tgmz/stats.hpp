#pragma once

#include <cmath>

#include "tgmz/common.hpp"

namespace tgmz {

// Distance between two sample means, normalized by the pooled total standard
// deviation. Used to quantify how far apart two task distributions sit in a
// given representation space.
template <class S>
double normalized_mean_discrepancy(const Mat<S>& a, const Mat<S>& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError(cat("mean_discrepancy: ", shape_str(a), " vs ", shape_str(b)));
  }
  Mat<S> mu_a = a.colwise().mean();
  Mat<S> mu_b = b.colwise().mean();
  const double dist = double((mu_a - mu_b).norm());
  auto total_var = [](const Mat<S>& m, const Mat<S>& mu) {
    Mat<S> c = m.rowwise() - mu.row(0);
    return double(c.cwiseProduct(c).sum()) / double(m.rows());
  };
  const double pooled = std::sqrt(0.5 * (total_var(a, mu_a) + total_var(b, mu_b)));
  return dist / (pooled + 1e-12);
}

}  // namespace tgmz
