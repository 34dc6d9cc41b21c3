#pragma once

// Seeded Lloyd k-means on 2D points with farthest-point initialization.

#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "grinadapt/geometry.hpp"

namespace grinadapt {

struct KMeansConfig {
  std::size_t k = 2;
  std::size_t iterations = 20;
  std::uint64_t seed = 7;
};

struct KMeansResult {
  std::vector<geometry::Point2> centers;
  std::vector<std::size_t> assignment;
  std::vector<std::size_t> counts;
  std::size_t dominant = 0;  // cluster with most members
};

inline double squaredDistance(geometry::Point2 a, geometry::Point2 b) {
  const double dx = a.x - b.x, dy = a.y - b.y;
  return dx * dx + dy * dy;
}

/// Effective cluster count: min(k, n), collapsing to a single cluster below three points.
inline std::size_t effectiveClusterCount(std::size_t k, std::size_t n) {
  if (n < 3) return 1;
  return std::max<std::size_t>(1, std::min(k, n));
}

/// Dominance ties break toward smaller within-cluster variance, then lower index.
inline KMeansResult kmeans(std::span<const geometry::Point2> pts, const KMeansConfig& cfg) {
  KMeansResult r;
  if (pts.empty()) return r;
  const std::size_t k = effectiveClusterCount(cfg.k, pts.size());

  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick(0, pts.size() - 1);
  r.centers.push_back(pts[pick(rng)]);
  while (r.centers.size() < k) {
    std::size_t far = 0;
    double farD = -1.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : r.centers) best = std::min(best, squaredDistance(pts[i], c));
      if (best > farD) {
        farD = best;
        far = i;
      }
    }
    r.centers.push_back(pts[far]);
  }

  r.assignment.assign(pts.size(), 0);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    bool changed = (it == 0);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      std::size_t best = 0;
      double bestD = squaredDistance(pts[i], r.centers[0]);
      for (std::size_t c = 1; c < k; ++c) {
        const double d = squaredDistance(pts[i], r.centers[c]);
        if (d < bestD) {
          bestD = d;
          best = c;
        }
      }
      if (r.assignment[i] != best) changed = true;
      r.assignment[i] = best;
    }
    std::vector<geometry::Point2> sums(k);
    std::vector<std::size_t> n(k, 0);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      sums[r.assignment[i]].x += pts[i].x;
      sums[r.assignment[i]].y += pts[i].y;
      ++n[r.assignment[i]];
    }
    for (std::size_t c = 0; c < k; ++c)
      if (n[c] > 0) r.centers[c] = {sums[c].x / n[c], sums[c].y / n[c]};  // empty keeps its center
    if (!changed) break;
  }

  r.counts.assign(k, 0);
  std::vector<double> variance(k, 0.0);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    ++r.counts[r.assignment[i]];
    variance[r.assignment[i]] += squaredDistance(pts[i], r.centers[r.assignment[i]]);
  }
  for (std::size_t c = 0; c < k; ++c)
    if (r.counts[c] > 0) variance[c] /= static_cast<double>(r.counts[c]);
  for (std::size_t c = 1; c < k; ++c) {
    const std::size_t d = r.dominant;
    if (r.counts[c] > r.counts[d] || (r.counts[c] == r.counts[d] && variance[c] < variance[d]))
      r.dominant = c;
  }
  return r;
}

}  // namespace grinadapt
