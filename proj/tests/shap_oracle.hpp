#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "ctm/gbt.hpp"

namespace ctm::test {

/// Path-dependent conditional expectation of a tree given the features in
/// mask: known features follow x, unknown ones average children by cover.
inline double cond_expectation(const Tree& t, std::span<const double> x, unsigned mask, int node = 0) {
  const auto& n = t.nodes[static_cast<std::size_t>(node)];
  if (n.is_leaf()) return n.value;
  if (mask >> n.feature & 1u)
    return cond_expectation(t, x, mask, x[static_cast<std::size_t>(n.feature)] < n.threshold ? n.left : n.right);
  const auto& l = t.nodes[static_cast<std::size_t>(n.left)];
  const auto& r = t.nodes[static_cast<std::size_t>(n.right)];
  return (l.cover * cond_expectation(t, x, mask, n.left) + r.cover * cond_expectation(t, x, mask, n.right)) / n.cover;
}

/// Shapley values of one class by enumerating every feature subset.
inline std::vector<double> shapley_bruteforce(const GbtModel& m, std::size_t cls, std::span<const double> x) {
  const std::size_t F = x.size();
  auto v = [&](unsigned mask) {
    double s = 0.0;
    for (const auto& t : m.trees[cls]) s += cond_expectation(t, x, mask);
    return s;
  };
  std::vector<double> fact(F + 1, 1.0);
  for (std::size_t i = 1; i <= F; ++i) fact[i] = fact[i - 1] * static_cast<double>(i);
  std::vector<double> phi(F, 0.0);
  for (std::size_t j = 0; j < F; ++j)
    for (unsigned mask = 0; mask < (1u << F); ++mask) {
      if (mask >> j & 1u) continue;
      const auto s = static_cast<std::size_t>(__builtin_popcount(mask));
      const double w = fact[s] * fact[F - s - 1] / fact[F];
      phi[j] += w * (v(mask | (1u << j)) - v(mask));
    }
  return phi;
}

}  // namespace ctm::test
