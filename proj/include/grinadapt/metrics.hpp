#pragma once

// Dice, average symmetric surface distance, disc-scan FAZ score and
// grouped mean/std aggregation.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "grinadapt/core.hpp"

namespace grinadapt::metrics {

/// 2|P n T| / (|P| + |T|); 1 when both masks are empty.
inline double dice(const LabelMap& pred, const LabelMap& truth, std::uint8_t cls) {
  if (pred.height() != truth.height() || pred.width() != truth.width())
    throw ArgumentError("dice: label maps differ in shape");
  std::size_t inter = 0, np = 0, nt = 0;
  for (std::size_t i = 0; i < pred.pixelCount(); ++i) {
    const bool p = pred[i] == cls, t = truth[i] == cls;
    inter += p && t;
    np += p;
    nt += t;
  }
  if (np + nt == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(np + nt);
}

/// Mask pixels with a 4-neighbour outside the mask (image exterior counts as outside).
inline std::vector<std::size_t> boundaryPixels(const LabelMap& m, std::uint8_t cls) {
  std::vector<std::size_t> out;
  const std::size_t H = m.height(), W = m.width();
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      if (m(y, x) != cls) continue;
      const bool interior = y > 0 && x > 0 && y + 1 < H && x + 1 < W && m(y - 1, x) == cls &&
                            m(y + 1, x) == cls && m(y, x - 1) == cls && m(y, x + 1) == cls;
      if (!interior) out.push_back(y * W + x);
    }
  return out;
}

namespace detail {

/// 1D lower envelope pass of the exact squared Euclidean distance transform.
/// Infinite samples never contribute a parabola.
inline void edt1d(const double* f, std::size_t n, double* d, std::vector<std::size_t>& v, std::vector<double>& z) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  v.assign(n, 0);
  z.assign(n + 1, 0.0);
  long k = -1;
  for (std::size_t q = 0; q < n; ++q) {
    if (f[q] == inf) continue;
    const double fq = f[q] + double(q) * double(q);
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -inf;
      z[1] = inf;
      continue;
    }
    double s;
    while (true) {
      const double p = double(v[k]);
      s = (fq - (f[v[k]] + p * p)) / (2.0 * double(q) - 2.0 * p);
      if (s <= z[k]) {
        --k;  // z[0] is -inf, so k stays >= 0
        continue;
      }
      break;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = inf;
  }
  if (k < 0) {
    std::fill(d, d + n, inf);
    return;
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (z[k + 1] < static_cast<double>(q)) ++k;
    const double dq = static_cast<double>(q) - static_cast<double>(v[k]);
    d[q] = dq * dq + f[v[k]];
  }
}

/// Exact squared distance from every pixel to the nearest seed pixel.
inline std::vector<double> squaredDistanceTransform(std::size_t H, std::size_t W, const std::vector<std::size_t>& seeds) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> g(H * W, inf);
  for (auto s : seeds) g[s] = 0.0;
  std::vector<double> col(H), out(std::max(H, W));
  std::vector<std::size_t> v;
  std::vector<double> z;
  for (std::size_t x = 0; x < W; ++x) {
    for (std::size_t y = 0; y < H; ++y) col[y] = g[y * W + x];
    edt1d(col.data(), H, out.data(), v, z);
    for (std::size_t y = 0; y < H; ++y) g[y * W + x] = out[y];
  }
  for (std::size_t y = 0; y < H; ++y) {
    edt1d(&g[y * W], W, out.data(), v, z);
    std::copy(out.begin(), out.begin() + W, g.begin() + y * W);
  }
  return g;
}

}  // namespace detail

/// Pooled mean of boundary-to-boundary distances in both directions; empty when either mask is empty.
inline std::optional<double> assd(const LabelMap& pred, const LabelMap& truth, std::uint8_t cls) {
  if (pred.height() != truth.height() || pred.width() != truth.width())
    throw ArgumentError("assd: label maps differ in shape");
  const auto bp = boundaryPixels(pred, cls), bt = boundaryPixels(truth, cls);
  if (bp.empty() || bt.empty()) return std::nullopt;
  const std::size_t W = pred.width(), H = pred.height();
  double total = 0.0;
  if (bp.size() * bt.size() <= (1u << 20)) {
    auto nearest = [&](std::size_t a, const std::vector<std::size_t>& set) {
      const double ay = double(a / W), ax = double(a % W);
      double best = std::numeric_limits<double>::infinity();
      for (auto b : set) {
        const double dy = ay - double(b / W), dx = ax - double(b % W);
        best = std::min(best, dy * dy + dx * dx);
      }
      return std::sqrt(best);
    };
    for (auto a : bp) total += nearest(a, bt);
    for (auto b : bt) total += nearest(b, bp);
  } else {
    const auto dt = detail::squaredDistanceTransform(H, W, bt);
    const auto dp = detail::squaredDistanceTransform(H, W, bp);
    for (auto a : bp) total += std::sqrt(dt[a]);
    for (auto b : bt) total += std::sqrt(dp[b]);
  }
  return total / static_cast<double>(bp.size() + bt.size());
}

/// 100 when a disc-centred prediction carries no FAZ pixel, else 0.
inline double fazDiscScore(const LabelMap& pred, ScanKind kind) {
  if (kind != ScanKind::Disc6) throw ArgumentError("fazDiscScore applies to disc-centred scans only");
  return pred.count(classId(CavfClass::Faz)) == 0 ? 100.0 : 0.0;
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

struct ImageRecord {
  std::map<std::string, std::string> keys;               // e.g. model, domain, site
  std::map<std::string, std::optional<double>> values;   // e.g. DSC_A, ASSD_V
};

struct Stat {
  double mean = 0.0;
  double stddev = 0.0;  // population
  std::size_t count = 0;
  std::size_t missing = 0;
};

struct GroupSummary {
  std::map<std::string, std::string> keys;
  std::map<std::string, Stat> stats;
};

struct EvalReport {
  std::vector<std::string> groupBy;
  std::vector<GroupSummary> groups;

  const GroupSummary* find(const std::map<std::string, std::string>& keys) const {
    for (const auto& g : groups)
      if (g.keys == keys) return &g;
    return nullptr;
  }
};

/// Mean +/- population standard deviation per group; missing values are excluded and counted.
inline EvalReport aggregate(const std::vector<ImageRecord>& records, const std::vector<std::string>& groupBy) {
  EvalReport rep;
  rep.groupBy = groupBy;
  std::map<std::map<std::string, std::string>, std::map<std::string, std::vector<std::optional<double>>>> buckets;
  for (const auto& r : records) {
    std::map<std::string, std::string> key;
    for (const auto& k : groupBy) {
      auto it = r.keys.find(k);
      key[k] = it == r.keys.end() ? std::string{} : it->second;
    }
    auto& b = buckets[key];
    for (const auto& [m, v] : r.values) b[m].push_back(v);
  }
  for (const auto& [key, metricsByName] : buckets) {
    GroupSummary g;
    g.keys = key;
    for (const auto& [m, vals] : metricsByName) {
      Stat s;
      // Shifted by the first value so identical samples give an exact mean and zero spread.
      std::optional<double> shift;
      double sum = 0.0, sq = 0.0;
      for (const auto& v : vals) {
        if (!v) {
          ++s.missing;
          continue;
        }
        if (!shift) shift = *v;
        const double d = *v - *shift;
        sum += d;
        sq += d * d;
        ++s.count;
      }
      if (s.count > 0) {
        const double n = static_cast<double>(s.count);
        s.mean = *shift + sum / n;
        s.stddev = std::sqrt(std::max(0.0, (sq - sum * sum / n) / n));
      }
      g.stats[m] = s;
    }
    rep.groups.push_back(std::move(g));
  }
  return rep;
}

/// Difference of group means (report - baseline) for groups and metrics present in both.
inline std::vector<GroupSummary> improvement(const EvalReport& report, const EvalReport& baseline) {
  std::vector<GroupSummary> out;
  for (const auto& g : report.groups) {
    const auto* b = baseline.find(g.keys);
    if (!b) continue;
    GroupSummary d;
    d.keys = g.keys;
    for (const auto& [m, s] : g.stats) {
      auto it = b->stats.find(m);
      if (it == b->stats.end() || s.count == 0 || it->second.count == 0) continue;
      d.stats[m] = Stat{s.mean - it->second.mean, 0.0, s.count, 0};
    }
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace grinadapt::metrics
