#pragma once

#include <cmath>
#include <limits>
#include <span>

namespace ctm::test {

namespace detail {

struct PathBest {
  double cost = std::numeric_limits<double>::infinity();
  int len = 0;
};

inline void enumerate_paths(std::span<const double> x, std::span<const double> y, std::size_t i, std::size_t j,
                            double cost, int len, PathBest& best) {
  cost += std::abs(x[i] - y[j]);
  ++len;
  if (i + 1 == x.size() && j + 1 == y.size()) {
    if (cost < best.cost || (cost == best.cost && len < best.len)) best = {cost, len};
    return;
  }
  if (i + 1 < x.size() && j + 1 < y.size()) enumerate_paths(x, y, i + 1, j + 1, cost, len, best);
  if (i + 1 < x.size()) enumerate_paths(x, y, i + 1, j, cost, len, best);
  if (j + 1 < y.size()) enumerate_paths(x, y, i, j + 1, cost, len, best);
}

}  // namespace detail

/// Length-normalized DTW by brute force over every monotone warping path.
inline double dtw_exhaustive(std::span<const double> x, std::span<const double> y) {
  if (x.empty() || y.empty()) return 0.0;
  detail::PathBest best;
  detail::enumerate_paths(x, y, 0, 0, 0.0, 0, best);
  return best.cost / best.len;
}

}  // namespace ctm::test
