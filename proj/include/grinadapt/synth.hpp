#pragma once

// Synthetic multi-view subjects: a random vessel-tree world rasterised into CAVF
// classes, viewed through planted transforms, softened into probabilities and
// corrupted per view. Everything is a pure function of the seed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "grinadapt/core.hpp"
#include "grinadapt/geometry.hpp"
#include "grinadapt/integration.hpp"

namespace grinadapt::synth {

using geometry::Homography;
using geometry::Point2;

struct TreeConfig {
  std::size_t trunksPerType = 4;
  std::size_t depth = 5;
  double trunkLength = 150.0;
  double lengthDecay = 0.72;
  double trunkWidth = 6.0;
  double widthDecay = 0.8;
  double minWidth = 2.6;
  double branchAngleMinDeg = 20.0;
  double branchAngleMaxDeg = 40.0;
  double roughness = 0.12;  // midpoint displacement, fraction of segment length
  int subdivisions = 3;
};

/// Half-widths of the uniform ranges planted transforms are drawn from.
struct TransformRanges {
  double rotationDeg = 5.0;
  double scaleDelta = 0.05;
  double translation = 12.0;
  double shear = 0.03;
};

struct CorruptionSpec {
  double level = 0.0;  // 0 = identity
  double noiseSigma = 0.15;
  double dropoutBlobs = 6.0;
  double dropoutRadius = 10.0;
  double dropoutFraction = 0.8;  // share of A/V mass moved to background inside a blob
  double contrast = 0.5;         // p^(1/(1 + contrast*level))
};

/// Intensity style of a scanner domain for the model input image.
struct DomainStyle {
  double gain = 1.0;
  double bias = 0.0;
  double avGain = 1.0;
  double avBias = 0.0;
  double noise = 0.05;
};

struct ViewSpec {
  std::string domain;
  ScanKind kind = ScanKind::Macula6;
  std::size_t size = 256;
  Point2 offset{0.0, 0.0};  // world offset of the view centre
  CorruptionSpec corruption{};
  DomainStyle style{};
  bool planted = true;  // false pins the view transform to its offset
};

inline std::vector<ViewSpec> defaultViews() {
  return {
      {"D1", ScanKind::Macula6, 256, {0, 0}, {}, {}, true},
      {"D2", ScanKind::Macula6, 256, {0, 0}, {}, {}, true},
      {"D3", ScanKind::Macula6, 256, {0, 0}, {}, {}, true},
      {"D4", ScanKind::Disc6, 256, {160, 0}, {}, {}, true},
      {"D5", ScanKind::Macula12, 512, {0, 0}, {}, {}, true},
      {"CFP", ScanKind::Auxiliary, 512, {0, 0}, {}, {}, true},
  };
}

struct SynthConfig {
  std::size_t canvas = 256;
  std::size_t worldSize = 560;
  std::size_t commonSize = integration::kCommonSize;
  Point2 fovea{256.0, 256.0};
  double fazRadius = 22.0;
  Point2 disc{416.0, 256.0};
  double discBlobRadius = 30.0;
  double discBlobStrength = 0.25;
  double capillaryDensity = 0.06;
  TreeConfig tree{};
  TransformRanges ranges{};
  geometry::ValidationThresholds thresholds{};
  std::vector<ViewSpec> views = defaultViews();
  std::uint64_t seed = 1;
};

struct Subject {
  std::string id;
  LabelMap groundTruth;  // world frame
  integration::SubjectBag bag;
  std::vector<Homography> planted;   // per view: common space -> world
  std::vector<LabelMap> viewTruth;   // per view, original coordinates
  std::vector<InputImage> inputs;    // per view; empty for the auxiliary modality
};

namespace detail {

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline void paintSegment(LabelMap& m, Point2 a, Point2 b, double width, std::uint8_t cls) {
  const double r = width / 2.0;
  const long x0 = std::max(0L, static_cast<long>(std::floor(std::min(a.x, b.x) - r - 1)));
  const long y0 = std::max(0L, static_cast<long>(std::floor(std::min(a.y, b.y) - r - 1)));
  const long x1 = std::min(static_cast<long>(m.width()) - 1, static_cast<long>(std::ceil(std::max(a.x, b.x) + r + 1)));
  const long y1 = std::min(static_cast<long>(m.height()) - 1, static_cast<long>(std::ceil(std::max(a.y, b.y) + r + 1)));
  const double dx = b.x - a.x, dy = b.y - a.y, len2 = dx * dx + dy * dy;
  for (long y = y0; y <= y1; ++y)
    for (long x = x0; x <= x1; ++x) {
      double t = len2 > 0 ? ((x - a.x) * dx + (y - a.y) * dy) / len2 : 0.0;
      t = std::clamp(t, 0.0, 1.0);
      if (std::hypot(x - (a.x + t * dx), y - (a.y + t * dy)) <= r)
        m(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = cls;
    }
}

inline void displace(std::vector<Point2>& out, Point2 a, Point2 b, double amp, int levels, std::mt19937_64& rng) {
  if (levels == 0) {
    out.push_back(b);
    return;
  }
  const double dx = b.x - a.x, dy = b.y - a.y, len = std::hypot(dx, dy);
  const double off = uniform(rng, -amp, amp);
  const Point2 mid{(a.x + b.x) / 2 - off * dy / std::max(len, 1e-9), (a.y + b.y) / 2 + off * dx / std::max(len, 1e-9)};
  displace(out, a, mid, amp / 2, levels - 1, rng);
  displace(out, mid, b, amp / 2, levels - 1, rng);
}

inline void growBranch(LabelMap& m, Point2 p, double angle, double len, double width, std::size_t depth,
                       std::uint8_t cls, const TreeConfig& cfg, std::mt19937_64& rng) {
  const Point2 end{p.x + len * std::cos(angle), p.y + len * std::sin(angle)};
  std::vector<Point2> line{p};
  displace(line, p, end, cfg.roughness * len, cfg.subdivisions, rng);
  for (std::size_t i = 1; i < line.size(); ++i) paintSegment(m, line[i - 1], line[i], width, cls);
  if (depth <= 1) return;
  const double nextLen = len * cfg.lengthDecay, nextWidth = std::max(width * cfg.widthDecay, cfg.minWidth);
  for (int side : {-1, 1}) {
    const double turn = uniform(rng, cfg.branchAngleMinDeg, cfg.branchAngleMaxDeg) * std::numbers::pi / 180.0;
    growBranch(m, end, angle + side * turn, nextLen, nextWidth, depth - 1, cls, cfg, rng);
  }
}

}  // namespace detail

/// Capillary texture, interleaved artery/vein trees rooted at the disc, FAZ disk last.
inline LabelMap renderWorld(const SynthConfig& cfg, std::mt19937_64& rng) {
  const std::size_t S = cfg.worldSize;
  LabelMap m(S, S, classId(CavfClass::Background));

  const double meanLen = 8.0;
  const auto segments = static_cast<std::size_t>(cfg.capillaryDensity * double(S * S) / meanLen);
  for (std::size_t i = 0; i < segments; ++i) {
    const Point2 a{detail::uniform(rng, 0, double(S)), detail::uniform(rng, 0, double(S))};
    const double ang = detail::uniform(rng, 0, 2 * std::numbers::pi), len = detail::uniform(rng, 4, 12);
    for (double t = 0; t <= len; t += 0.5) {
      const long x = std::lround(a.x + t * std::cos(ang)), y = std::lround(a.y + t * std::sin(ang));
      if (x >= 0 && y >= 0 && x < long(S) && y < long(S)) m(std::size_t(y), std::size_t(x)) = classId(CavfClass::Capillary);
    }
  }

  const std::size_t trunks = 2 * cfg.tree.trunksPerType;
  const double phase = detail::uniform(rng, 0, 2 * std::numbers::pi);
  for (std::size_t i = 0; i < trunks; ++i) {
    const double angle = phase + 2 * std::numbers::pi * (double(i) + detail::uniform(rng, -0.25, 0.25)) / double(trunks);
    const auto cls = classId(i % 2 == 0 ? CavfClass::Artery : CavfClass::Vein);
    detail::growBranch(m, cfg.disc, angle, cfg.tree.trunkLength, cfg.tree.trunkWidth, cfg.tree.depth, cls, cfg.tree, rng);
  }

  for (std::size_t y = 0; y < S; ++y)
    for (std::size_t x = 0; x < S; ++x)
      if (std::hypot(x - cfg.fovea.x, y - cfg.fovea.y) <= cfg.fazRadius) m(y, x) = classId(CavfClass::Faz);
  return m;
}

/// x_world = L (x - c) + c + offset + t with L built from the drawn components.
inline Homography plantTransform(const TransformRanges& r, Point2 centre, Point2 offset, std::mt19937_64& rng) {
  geometry::DecomposedTransform d;
  d.sx = 1.0 + detail::uniform(rng, -r.scaleDelta, r.scaleDelta);
  d.sy = 1.0 + detail::uniform(rng, -r.scaleDelta, r.scaleDelta);
  d.theta = detail::uniform(rng, -r.rotationDeg, r.rotationDeg);
  d.shear = detail::uniform(rng, -r.shear, r.shear);
  const double tx = detail::uniform(rng, -r.translation, r.translation);
  const double ty = detail::uniform(rng, -r.translation, r.translation);
  const Homography L = geometry::recompose(d);
  return Homography::translation(centre.x + offset.x + tx, centre.y + offset.y + ty) * L *
         Homography::translation(-centre.x, -centre.y);
}

/// Nearest-neighbour view of the world through `viewToWorld` (view pixel -> world).
inline LabelMap sampleLabels(const LabelMap& world, const Homography& viewToWorld, std::size_t n) {
  LabelMap out(n, n, classId(CavfClass::Background));
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const auto w = viewToWorld.apply({double(x), double(y)});
      if (!w) continue;
      const long wx = std::lround(w->x), wy = std::lround(w->y);
      if (wx >= 0 && wy >= 0 && wx < long(world.width()) && wy < long(world.height()))
        out(y, x) = world(std::size_t(wy), std::size_t(wx));
    }
  return out;
}

/// 3x3 kernel, centre 0.6 and 0.05 per neighbour, renormalised where it leaves the image.
inline ProbabilityMap soften(const LabelMap& labels) {
  ProbabilityMap out(labels.height(), labels.width(), kNumClasses);
  const long H = long(labels.height()), W = long(labels.width());
  for (long y = 0; y < H; ++y)
    for (long x = 0; x < W; ++x) {
      auto p = out.pixel(std::size_t(y), std::size_t(x));
      double total = 0.0;
      for (long dy = -1; dy <= 1; ++dy)
        for (long dx = -1; dx <= 1; ++dx) {
          const long yy = y + dy, xx = x + dx;
          if (yy < 0 || xx < 0 || yy >= H || xx >= W) continue;
          const double w = (dy == 0 && dx == 0) ? 0.6 : 0.05;
          p[labels(std::size_t(yy), std::size_t(xx))] += w;
          total += w;
        }
      for (double& v : p) v /= total;
    }
  return out;
}

inline void normalizePixel(std::span<double> p) {
  double s = 0.0;
  for (double& v : p) s += v = std::max(v, 0.0);
  if (s <= 0.0) {
    std::fill(p.begin(), p.end(), 0.0);
    p[classId(CavfClass::Background)] = 1.0;
    return;
  }
  for (double& v : p) v /= s;
}

/// Flattening contrast, then A/V dropout blobs, then Gaussian channel noise.
/// Level 0 returns the input unchanged.
inline ProbabilityMap corruptView(const ProbabilityMap& map, const CorruptionSpec& spec, std::mt19937_64& rng) {
  requireCavf(map, "corruptView");
  const std::uint64_t blobSeed = rng(), noiseSeed = rng();
  if (spec.level <= 0.0) return map;
  ProbabilityMap out = map;
  const double gamma = 1.0 / (1.0 + spec.contrast * spec.level);
  for (std::size_t i = 0; i < out.pixelCount(); ++i) {
    auto p = out.pixel(i);
    for (double& v : p) v = std::pow(v, gamma);
    normalizePixel(p);
  }

  std::mt19937_64 blobRng(blobSeed);
  const auto blobs = static_cast<std::size_t>(std::lround(spec.dropoutBlobs * spec.level));
  for (std::size_t b = 0; b < blobs; ++b) {
    const double cx = detail::uniform(blobRng, 0, double(out.width())), cy = detail::uniform(blobRng, 0, double(out.height()));
    const double r = spec.dropoutRadius;
    for (long y = std::max(0L, long(cy - r)); y <= std::min(long(out.height()) - 1, long(cy + r)); ++y)
      for (long x = std::max(0L, long(cx - r)); x <= std::min(long(out.width()) - 1, long(cx + r)); ++x) {
        if (std::hypot(x - cx, y - cy) > r) continue;
        auto p = out.pixel(std::size_t(y), std::size_t(x));
        for (auto c : {CavfClass::Artery, CavfClass::Vein}) {
          const double moved = spec.dropoutFraction * p[classId(c)];
          p[classId(c)] -= moved;
          p[classId(CavfClass::Background)] += moved;
        }
      }
  }

  std::mt19937_64 noiseRng(noiseSeed);
  std::normal_distribution<double> noise(0.0, spec.noiseSigma * spec.level);
  for (std::size_t i = 0; i < out.pixelCount(); ++i) {
    auto p = out.pixel(i);
    for (double& v : p) v += noise(noiseRng);
    normalizePixel(p);
  }
  return out;
}

/// Two-channel model input: flow intensity and an artery/vein contrast channel.
inline InputImage renderInput(const LabelMap& labels, const DomainStyle& style, std::mt19937_64& rng) {
  static constexpr double flow[kNumClasses] = {0.15, 0.45, 0.85, 0.75, 0.0};
  static constexpr double av[kNumClasses] = {0.5, 0.5, 0.8, 0.2, 0.5};
  const std::size_t H = labels.height(), W = labels.width();
  InputImage raw(H, W, 2);
  for (std::size_t i = 0; i < labels.pixelCount(); ++i) {
    raw.pixel(i)[0] = flow[labels[i]];
    raw.pixel(i)[1] = av[labels[i]];
  }
  // Separable blur, sigma 0.6, clamped at the border.
  const double k1 = std::exp(-1.0 / (2 * 0.36)), norm = 1.0 + 2.0 * k1;
  const double kern[3] = {k1 / norm, 1.0 / norm, k1 / norm};
  InputImage tmp(H, W, 2), out(H, W, 2);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < 2; ++c) {
        double s = 0.0;
        for (int d = -1; d <= 1; ++d)
          s += kern[d + 1] * raw(y, std::size_t(std::clamp(long(x) + d, 0L, long(W) - 1)), c);
        tmp(y, x, c) = s;
      }
  std::normal_distribution<double> noise(0.0, style.noise);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < 2; ++c) {
        double s = 0.0;
        for (int d = -1; d <= 1; ++d)
          s += kern[d + 1] * tmp(std::size_t(std::clamp(long(y) + d, 0L, long(H) - 1)), x, c);
        out(y, x, c) = s;
      }
  for (std::size_t i = 0; i < out.pixelCount(); ++i) {
    auto p = out.pixel(i);
    p[0] = style.gain * p[0] + style.bias + noise(rng);
    p[1] = style.avGain * (p[1] - 0.5) + 0.5 + style.avBias + noise(rng);
  }
  return out;
}

/// The world through view `spec`: labels, softened/corrupted prediction, input image.
inline Subject generateSubject(const SynthConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Subject s;
  s.id = "S" + std::to_string(seed);
  s.bag.subjectId = s.id;
  s.groundTruth = renderWorld(cfg, rng);
  const Point2 centre{double(cfg.commonSize) / 2.0, double(cfg.commonSize) / 2.0};
  for (const auto& v : cfg.views) {
    const TransformRanges r = v.planted ? cfg.ranges : TransformRanges{0, 0, 0, 0};
    const Homography P = plantTransform(r, centre, v.offset, rng);
    if (!geometry::validate(geometry::decompose(P), cfg.thresholds).valid)
      throw ArgumentError("planted transform outside validation bounds");
    const Homography viewToWorld = P * integration::commonTransform(v.kind, v.size, cfg.commonSize);
    LabelMap truth = sampleLabels(s.groundTruth, viewToWorld, v.size);
    if (v.kind == ScanKind::Disc6)
      for (auto& l : truth.values())
        if (l == classId(CavfClass::Faz)) l = classId(CavfClass::Background);
    if (v.kind == ScanKind::Auxiliary)
      for (auto& l : truth.values())
        if (l != classId(CavfClass::Artery) && l != classId(CavfClass::Vein)) l = classId(CavfClass::Background);

    ProbabilityMap pred = soften(truth);
    if (v.kind == ScanKind::Disc6 && cfg.discBlobStrength > 0.0) {
      const auto inv = geometry::invert(viewToWorld);
      const auto c = inv.apply(cfg.disc);
      static constexpr double blob[kNumClasses] = {0.3, 0.5, 0.1, 0.1, 0.0};
      for (std::size_t y = 0; c && y < v.size; ++y)
        for (std::size_t x = 0; x < v.size; ++x) {
          if (std::hypot(x - c->x, y - c->y) > cfg.discBlobRadius) continue;
          auto p = pred.pixel(y, x);
          for (std::size_t k = 0; k < kNumClasses; ++k)
            p[k] = (1.0 - cfg.discBlobStrength) * p[k] + cfg.discBlobStrength * blob[k];
        }
    }
    pred = corruptView(pred, v.corruption, rng);
    s.inputs.push_back(v.kind == ScanKind::Auxiliary ? InputImage{} : renderInput(truth, v.style, rng));
    s.bag.views.push_back({v.domain, v.kind, std::move(pred), {}});
    s.viewTruth.push_back(std::move(truth));
    s.planted.push_back(P);
  }
  return s;
}

/// Expected transform from view j's common space into view a's common space.
inline Homography expectedRegistration(const Subject& s, std::size_t j, std::size_t anchor) {
  return geometry::invert(s.planted[anchor]) * s.planted[j];
}

}  // namespace grinadapt::synth
