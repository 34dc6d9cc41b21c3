#pragma once

// Pairwise registration of vessel maps (Harris keypoints, normalized patch
// descriptors, mutual ratio-test matching, RANSAC affine/homography fit) and
// subject-level multi-trial registration with adaptive anchor selection.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "grinadapt/core.hpp"
#include "grinadapt/geometry.hpp"
#include "grinadapt/kmeans.hpp"

namespace grinadapt::registration {

using geometry::Homography;
using geometry::Point2;

enum class Stage { Detection, Matching, Estimation };

inline std::string_view toString(Stage s) {
  switch (s) {
    case Stage::Detection: return "detection";
    case Stage::Matching: return "matching";
    case Stage::Estimation: return "estimation";
  }
  return "unknown";
}

class RegistrationError : public Error {
 public:
  RegistrationError(Stage stage, const std::string& what)
      : Error(std::string(toString(stage)) + ": " + what), stage_(stage) {}
  Stage stage() const { return stage_; }

 private:
  Stage stage_;
};

class ExhaustedAnchorsError : public Error {
 public:
  using Error::Error;
};

/// Vesselness = capillary + artery + vein, clamped to [0,1].
inline VesselnessMap extractVesselness(const ProbabilityMap& map) {
  requireCavf(map, "extractVesselness");
  VesselnessMap v(map.height(), map.width(), 1);
  for (std::size_t i = 0; i < map.pixelCount(); ++i) {
    auto p = map.pixel(i);
    v.pixel(i)[0] = std::clamp(p[classId(CavfClass::Capillary)] + p[classId(CavfClass::Artery)] +
                                   p[classId(CavfClass::Vein)],
                               0.0, 1.0);
  }
  return v;
}

// ---------------------------------------------------------------------------
// Keypoints
// ---------------------------------------------------------------------------

inline constexpr std::size_t kPatchSize = 16;
inline constexpr std::size_t kDescriptorSize = kPatchSize * kPatchSize;

struct Keypoint {
  double x = 0.0;
  double y = 0.0;
  double response = 0.0;
  std::vector<double> descriptor;  // unit L2 norm
};

struct DetectorConfig {
  double smoothingSigma = 1.0;     // pre-smoothing before gradients and patch sampling
  double integrationSigma = 1.5;   // structure-tensor window
  double harrisK = 0.04;
  double relativeThreshold = 0.01; // fraction of the strongest response
  double absoluteThreshold = 1e-8;
  double nmsRadius = 4.0;
  std::size_t maxKeypoints = 800;
};

namespace detail {

inline std::vector<double> gaussianKernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double s = 0.0;
  for (int i = -radius; i <= radius; ++i) s += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= s;
  return k;
}

/// Separable blur of a single-channel row-major image, zero padding outside.
inline std::vector<double> blur(const std::vector<double>& img, std::size_t h, std::size_t w, double sigma) {
  if (sigma <= 0.0) return img;
  const auto k = gaussianKernel(sigma);
  const long r = static_cast<long>(k.size() / 2);
  std::vector<double> tmp(img.size(), 0.0), out(img.size(), 0.0);
  const long H = static_cast<long>(h), W = static_cast<long>(w);
  for (long y = 0; y < H; ++y)
    for (long x = 0; x < W; ++x) {
      double s = 0.0;
      for (long d = -r; d <= r; ++d) {
        const long xx = x + d;
        if (xx >= 0 && xx < W) s += k[d + r] * img[y * W + xx];
      }
      tmp[y * W + x] = s;
    }
  for (long y = 0; y < H; ++y)
    for (long x = 0; x < W; ++x) {
      double s = 0.0;
      for (long d = -r; d <= r; ++d) {
        const long yy = y + d;
        if (yy >= 0 && yy < H) s += k[d + r] * tmp[yy * W + x];
      }
      out[y * W + x] = s;
    }
  return out;
}

inline double bilinear(const std::vector<double>& img, std::size_t h, std::size_t w, double x, double y) {
  const double fx = std::floor(x), fy = std::floor(y);
  const long x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
  const double ax = x - fx, ay = y - fy;
  auto at = [&](long yy, long xx) {
    if (xx < 0 || yy < 0 || xx >= static_cast<long>(w) || yy >= static_cast<long>(h)) return 0.0;
    return img[static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)];
  };
  return (1 - ax) * (1 - ay) * at(y0, x0) + ax * (1 - ay) * at(y0, x0 + 1) +
         (1 - ax) * ay * at(y0 + 1, x0) + ax * ay * at(y0 + 1, x0 + 1);
}

}  // namespace detail

/// Harris corner response map (row-major, same size as the input).
inline std::vector<double> harrisResponse(const VesselnessMap& v, const DetectorConfig& cfg) {
  const std::size_t h = v.height(), w = v.width();
  const auto smooth = detail::blur(v.values(), h, w, cfg.smoothingSigma);
  std::vector<double> ixx(h * w, 0.0), iyy(h * w, 0.0), ixy(h * w, 0.0);
  for (std::size_t y = 1; y + 1 < h; ++y)
    for (std::size_t x = 1; x + 1 < w; ++x) {
      const double gx = 0.5 * (smooth[y * w + x + 1] - smooth[y * w + x - 1]);
      const double gy = 0.5 * (smooth[(y + 1) * w + x] - smooth[(y - 1) * w + x]);
      ixx[y * w + x] = gx * gx;
      iyy[y * w + x] = gy * gy;
      ixy[y * w + x] = gx * gy;
    }
  ixx = detail::blur(ixx, h, w, cfg.integrationSigma);
  iyy = detail::blur(iyy, h, w, cfg.integrationSigma);
  ixy = detail::blur(ixy, h, w, cfg.integrationSigma);
  std::vector<double> r(h * w);
  for (std::size_t i = 0; i < h * w; ++i) {
    const double tr = ixx[i] + iyy[i];
    r[i] = ixx[i] * iyy[i] - ixy[i] * ixy[i] - cfg.harrisK * tr * tr;
  }
  return r;
}

inline std::vector<Keypoint> detectKeypoints(const VesselnessMap& v, const DetectorConfig& cfg = {}) {
  const std::size_t h = v.height(), w = v.width();
  if (h < 32 || w < 32) throw ArgumentError("detectKeypoints needs an image of at least 32x32");
  const auto resp = harrisResponse(v, cfg);
  const auto smooth = detail::blur(v.values(), h, w, cfg.smoothingSigma);

  double maxR = 0.0;
  for (double r : resp) maxR = std::max(maxR, r);
  const double thresh = std::max(cfg.absoluteThreshold, cfg.relativeThreshold * maxR);
  if (maxR <= thresh) return {};

  // Patch footprint must stay inside the image.
  const double margin = kPatchSize / 2.0 + 1.0;
  struct Candidate {
    double r;
    std::size_t idx;
  };
  std::vector<Candidate> cands;
  for (std::size_t y = 1; y + 1 < h; ++y)
    for (std::size_t x = 1; x + 1 < w; ++x) {
      const double r = resp[y * w + x];
      if (r <= thresh) continue;
      if (x < margin || y < margin || x + margin >= w || y + margin >= h) continue;
      bool localMax = true;  // 3x3 pre-filter keeps the greedy pass small
      for (int dy = -1; dy <= 1 && localMax; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          if (!dx && !dy) continue;
          const double o = resp[(y + dy) * w + (x + dx)];
          if (o > r || (o == r && (dy < 0 || (dy == 0 && dx < 0)))) {
            localMax = false;
            break;
          }
        }
      if (localMax) cands.push_back({r, y * w + x});
    }
  std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
    return a.r != b.r ? a.r > b.r : a.idx < b.idx;
  });

  std::vector<Keypoint> out;
  const double r2 = cfg.nmsRadius * cfg.nmsRadius;
  for (const auto& c : cands) {
    if (out.size() >= cfg.maxKeypoints) break;
    const std::size_t y = c.idx / w, x = c.idx % w;
    // Quadratic sub-pixel refinement along each axis.
    auto refine = [](double m, double c0, double p) {
      const double den = m - 2 * c0 + p;
      return den < 0.0 ? std::clamp(0.5 * (m - p) / den, -0.5, 0.5) : 0.0;
    };
    const double sx = x + refine(resp[y * w + x - 1], c.r, resp[y * w + x + 1]);
    const double sy = y + refine(resp[(y - 1) * w + x], c.r, resp[(y + 1) * w + x]);
    bool suppressed = false;
    for (const auto& k : out)
      if ((k.x - sx) * (k.x - sx) + (k.y - sy) * (k.y - sy) < r2) {
        suppressed = true;
        break;
      }
    if (suppressed) continue;

    Keypoint kp{sx, sy, c.r, std::vector<double>(kDescriptorSize)};
    double mean = 0.0;
    for (std::size_t j = 0; j < kPatchSize; ++j)
      for (std::size_t i = 0; i < kPatchSize; ++i) {
        const double px = sx + (static_cast<double>(i) - (kPatchSize - 1) / 2.0);
        const double py = sy + (static_cast<double>(j) - (kPatchSize - 1) / 2.0);
        mean += kp.descriptor[j * kPatchSize + i] = detail::bilinear(smooth, h, w, px, py);
      }
    mean /= kDescriptorSize;
    double norm = 0.0;
    for (double& d : kp.descriptor) {
      d -= mean;
      norm += d * d;
    }
    norm = std::sqrt(norm);
    if (norm < 1e-9) continue;  // flat patch, nothing to describe
    for (double& d : kp.descriptor) d /= norm;
    out.push_back(std::move(kp));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Matching
// ---------------------------------------------------------------------------

struct Correspondence {
  Point2 moving;
  Point2 anchor;
};

struct MatchIndex {
  std::size_t a = 0;
  std::size_t b = 0;
};

/// Mutual nearest neighbours that also pass the ratio test d1 < ratio * d2 (a -> b direction).
inline std::vector<MatchIndex> matchDescriptors(std::span<const Keypoint> a, std::span<const Keypoint> b,
                                                double ratio) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw ArgumentError("ratio must lie in (0,1]");
  std::vector<MatchIndex> out;
  if (a.empty() || b.empty()) return out;
  const std::size_t na = a.size(), nb = b.size(), dim = a[0].descriptor.size();
  Eigen::MatrixXd A(dim, na), B(dim, nb);
  for (std::size_t i = 0; i < na; ++i) {
    if (a[i].descriptor.size() != dim) throw ArgumentError("descriptor lengths differ");
    A.col(Eigen::Index(i)) = Eigen::Map<const Eigen::VectorXd>(a[i].descriptor.data(), Eigen::Index(dim));
  }
  for (std::size_t j = 0; j < nb; ++j) {
    if (b[j].descriptor.size() != dim) throw ArgumentError("descriptor lengths differ");
    B.col(Eigen::Index(j)) = Eigen::Map<const Eigen::VectorXd>(b[j].descriptor.data(), Eigen::Index(dim));
  }
  // |a - b|^2 = |a|^2 + |b|^2 - 2 a.b, row-major (i, j).
  const Eigen::MatrixXd G = A.transpose() * B;
  const Eigen::VectorXd an = A.colwise().squaredNorm().transpose(), bn = B.colwise().squaredNorm().transpose();
  std::vector<double> d2(na * nb);
  for (std::size_t i = 0; i < na; ++i)
    for (std::size_t j = 0; j < nb; ++j)
      d2[i * nb + j] = std::max(0.0, an(Eigen::Index(i)) + bn(Eigen::Index(j)) - 2.0 * G(Eigen::Index(i), Eigen::Index(j)));
  std::vector<std::size_t> bestForB(nb, 0);
  for (std::size_t j = 0; j < nb; ++j)
    for (std::size_t i = 1; i < na; ++i)
      if (d2[i * nb + j] < d2[bestForB[j] * nb + j]) bestForB[j] = i;
  for (std::size_t i = 0; i < na; ++i) {
    std::size_t best = 0;
    double d1 = std::numeric_limits<double>::infinity(), dsecond = d1;
    for (std::size_t j = 0; j < nb; ++j) {
      const double d = d2[i * nb + j];
      if (d < d1) {
        dsecond = d1;
        d1 = d;
        best = j;
      } else if (d < dsecond) {
        dsecond = d;
      }
    }
    if (bestForB[best] != i) continue;
    if (!(std::sqrt(d1) < ratio * std::sqrt(dsecond))) continue;
    out.push_back({i, best});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Robust estimation
// ---------------------------------------------------------------------------

struct RansacConfig {
  std::size_t iterations = 2000;
  double inlierThresholdPx = 3.0;
  // Final polish: refit on matches within this tighter gate. Matches sliding along a
  // vessel pass the consensus gate and bias the fit by about a pixel. 0 disables.
  double refineThresholdPx = 1.5;
  std::size_t minInliers = 12;
  std::size_t minCorrespondences = 4;
  bool fullHomography = false;
  std::uint64_t seed = 1234;
  geometry::ValidationThresholds thresholds{};
};

struct RegistrationOutcome {
  Homography homography;
  geometry::DecomposedTransform decomposition;
  geometry::ValidationResult validation;
  std::size_t inlierCount = 0;
  double inlierRatio = 0.0;
  bool valid = false;
};

namespace detail {

inline std::optional<Homography> fitAffine(std::span<const Correspondence> c) {
  if (c.size() < 3) return std::nullopt;
  Eigen::Matrix3d ata = Eigen::Matrix3d::Zero();
  Eigen::Vector3d bx = Eigen::Vector3d::Zero(), by = Eigen::Vector3d::Zero();
  // Centre for conditioning.
  double mx = 0, my = 0;
  for (const auto& k : c) {
    mx += k.moving.x;
    my += k.moving.y;
  }
  mx /= c.size();
  my /= c.size();
  for (const auto& k : c) {
    const Eigen::Vector3d row(k.moving.x - mx, k.moving.y - my, 1.0);
    ata += row * row.transpose();
    bx += row * k.anchor.x;
    by += row * k.anchor.y;
  }
  Eigen::FullPivLU<Eigen::Matrix3d> lu(ata);
  if (lu.rank() < 3 || std::abs(ata.determinant()) < 1e-9) return std::nullopt;
  const Eigen::Vector3d px = lu.solve(bx), py = lu.solve(by);
  // Undo the centring: x' = a (x - mx) + b (y - my) + c.
  try {
    return Homography::affine(px(0), px(1), px(2) - px(0) * mx - px(1) * my, py(0), py(1),
                              py(2) - py(0) * mx - py(1) * my);
  } catch (const SingularTransformError&) {
    return std::nullopt;
  }
}

/// Normalized DLT.
inline std::optional<Homography> fitHomography(std::span<const Correspondence> c) {
  if (c.size() < 4) return std::nullopt;
  auto normalizer = [&](bool moving) {
    double mx = 0, my = 0;
    for (const auto& k : c) {
      const Point2 p = moving ? k.moving : k.anchor;
      mx += p.x;
      my += p.y;
    }
    mx /= c.size();
    my /= c.size();
    double spread = 0;
    for (const auto& k : c) {
      const Point2 p = moving ? k.moving : k.anchor;
      spread += std::hypot(p.x - mx, p.y - my);
    }
    spread /= c.size();
    const double s = spread > 1e-12 ? std::sqrt(2.0) / spread : 1.0;
    Eigen::Matrix3d t;
    t << s, 0, -s * mx, 0, s, -s * my, 0, 0, 1;
    return t;
  };
  const Eigen::Matrix3d tm = normalizer(true), ta = normalizer(false);
  Eigen::MatrixXd a(2 * c.size(), 9);
  for (std::size_t i = 0; i < c.size(); ++i) {
    const Eigen::Vector3d p = tm * Eigen::Vector3d(c[i].moving.x, c[i].moving.y, 1.0);
    const Eigen::Vector3d q = ta * Eigen::Vector3d(c[i].anchor.x, c[i].anchor.y, 1.0);
    a.row(2 * i) << -p(0), -p(1), -1, 0, 0, 0, q(0) * p(0), q(0) * p(1), q(0);
    a.row(2 * i + 1) << 0, 0, 0, -p(0), -p(1), -1, q(1) * p(0), q(1) * p(1), q(1);
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::VectorXd hv = svd.matrixV().col(8);
  Eigen::Matrix3d hn;
  hn << hv(0), hv(1), hv(2), hv(3), hv(4), hv(5), hv(6), hv(7), hv(8);
  const Eigen::Matrix3d hm = ta.inverse() * hn * tm;
  try {
    return Homography({hm(0, 0), hm(0, 1), hm(0, 2), hm(1, 0), hm(1, 1), hm(1, 2), hm(2, 0), hm(2, 1),
                       hm(2, 2)});
  } catch (const SingularTransformError&) {
    return std::nullopt;
  }
}

inline double reprojectionError(const Homography& h, const Correspondence& c) {
  const auto p = h.apply(c.moving);
  if (!p) return std::numeric_limits<double>::infinity();
  return std::hypot(p->x - c.anchor.x, p->y - c.anchor.y);
}

inline bool collinear(const Point2& a, const Point2& b, const Point2& c) {
  const double area = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
  return std::abs(area) < 1.0;  // pixel units: less than half a square pixel of triangle area
}

}  // namespace detail

inline RegistrationOutcome estimateTransform(std::span<const Correspondence> corr, const RansacConfig& cfg) {
  const std::size_t need = std::max<std::size_t>(cfg.minCorrespondences, cfg.fullHomography ? 4 : 3);
  if (corr.size() < need)
    throw RegistrationError(Stage::Estimation, "too few correspondences (" + std::to_string(corr.size()) + ")");
  const std::size_t sampleSize = cfg.fullHomography ? 4 : 3;
  auto fit = [&](std::span<const Correspondence> s) {
    return cfg.fullHomography ? detail::fitHomography(s) : detail::fitAffine(s);
  };
  auto score = [&](const Homography& h, std::vector<std::size_t>* inliers) {
    std::size_t n = 0;
    double cost = 0.0;
    const double t = cfg.inlierThresholdPx;
    for (std::size_t i = 0; i < corr.size(); ++i) {
      const double e = detail::reprojectionError(h, corr[i]);
      if (e <= t) {
        ++n;
        cost += e * e;
        if (inliers) inliers->push_back(i);
      } else {
        cost += t * t;
      }
    }
    return std::pair{n, cost};
  };

  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick(0, corr.size() - 1);
  std::optional<Homography> best;
  std::size_t bestN = 0;
  double bestCost = std::numeric_limits<double>::infinity();
  std::vector<Correspondence> sample(sampleSize);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    std::size_t idx[4];
    for (std::size_t s = 0; s < sampleSize; ++s) {
      bool fresh;
      do {
        idx[s] = pick(rng);
        fresh = true;
        for (std::size_t t = 0; t < s; ++t) fresh = fresh && idx[t] != idx[s];
      } while (!fresh);
      sample[s] = corr[idx[s]];
    }
    bool degenerate = false;
    for (std::size_t i = 0; i < sampleSize && !degenerate; ++i)
      for (std::size_t j = i + 1; j < sampleSize && !degenerate; ++j)
        for (std::size_t k = j + 1; k < sampleSize && !degenerate; ++k)
          degenerate = detail::collinear(sample[i].moving, sample[j].moving, sample[k].moving) ||
                       detail::collinear(sample[i].anchor, sample[j].anchor, sample[k].anchor);
    if (degenerate) continue;
    auto h = fit(sample);
    if (!h) continue;
    auto [n, cost] = score(*h, nullptr);
    if (n > bestN || (n == bestN && cost < bestCost)) {
      best = h;
      bestN = n;
      bestCost = cost;
    }
  }
  if (!best || bestN < cfg.minInliers)
    throw RegistrationError(Stage::Estimation,
                            "no model reached " + std::to_string(cfg.minInliers) + " inliers (best " +
                                std::to_string(bestN) + ")");

  // Least-squares refit on the consensus set until it stops changing.
  std::vector<std::size_t> inliers;
  score(*best, &inliers);
  for (int round = 0; round < 5; ++round) {
    std::vector<Correspondence> sel;
    sel.reserve(inliers.size());
    for (auto i : inliers) sel.push_back(corr[i]);
    auto refit = fit(sel);
    if (!refit) break;
    std::vector<std::size_t> next;
    score(*refit, &next);
    if (next.size() < inliers.size()) break;
    best = refit;
    if (next == inliers) break;
    inliers = std::move(next);
  }
  if (inliers.size() < cfg.minInliers)
    throw RegistrationError(Stage::Estimation, "refit lost consensus");

  if (cfg.refineThresholdPx > 0.0 && cfg.refineThresholdPx < cfg.inlierThresholdPx) {
    std::vector<std::size_t> core;
    for (int round = 0; round < 5; ++round) {
      std::vector<std::size_t> next;
      for (auto i : inliers)
        if (detail::reprojectionError(*best, corr[i]) <= cfg.refineThresholdPx) next.push_back(i);
      if (next.size() < cfg.minInliers || next == core) break;
      std::vector<Correspondence> sel;
      for (auto i : next) sel.push_back(corr[i]);
      auto refit = fit(sel);
      if (!refit) break;
      best = refit;
      core = std::move(next);
    }
    inliers.clear();
    score(*best, &inliers);
  }

  RegistrationOutcome out;
  out.homography = *best;
  out.inlierCount = inliers.size();
  out.inlierRatio = static_cast<double>(inliers.size()) / static_cast<double>(corr.size());
  try {
    out.decomposition = geometry::decompose(out.homography);
    out.validation = geometry::validate(out.decomposition, cfg.thresholds);
  } catch (const SingularTransformError& e) {
    throw RegistrationError(Stage::Estimation, e.what());
  }
  out.valid = out.validation.valid;
  return out;
}

struct PairConfig {
  DetectorConfig detector{};
  double ratio = 0.8;
  RansacConfig ransac{};
};

inline RegistrationOutcome registerKeypoints(std::span<const Keypoint> moving, std::span<const Keypoint> anchor,
                                             const PairConfig& cfg) {
  const std::size_t need = cfg.ransac.minCorrespondences;
  if (moving.size() < need || anchor.size() < need)
    throw RegistrationError(Stage::Detection, "too few keypoints");
  const auto matches = matchDescriptors(moving, anchor, cfg.ratio);
  if (matches.size() < need)
    throw RegistrationError(Stage::Matching, "too few matches (" + std::to_string(matches.size()) + ")");
  std::vector<Correspondence> corr;
  corr.reserve(matches.size());
  for (const auto& m : matches)
    corr.push_back({{moving[m.a].x, moving[m.a].y}, {anchor[m.b].x, anchor[m.b].y}});
  return estimateTransform(corr, cfg.ransac);
}

/// Transform taking `moving` coordinates into `anchor` coordinates.
inline RegistrationOutcome registerPair(const VesselnessMap& moving, const VesselnessMap& anchor,
                                        const PairConfig& cfg = {}) {
  std::vector<Keypoint> km, ka;
  try {
    km = detectKeypoints(moving, cfg.detector);
    ka = detectKeypoints(anchor, cfg.detector);
  } catch (const ArgumentError& e) {
    throw RegistrationError(Stage::Detection, e.what());
  }
  return registerKeypoints(km, ka, cfg);
}

// ---------------------------------------------------------------------------
// Multi-trial bag registration
// ---------------------------------------------------------------------------

/// Picks the unused index whose translation lies nearest the dominant k-means centroid.
/// Ties go to the lowest index.
inline std::size_t selectNextAnchor(std::span<const Point2> translations, const std::set<std::size_t>& used,
                                    const KMeansConfig& cfg = {}) {
  std::optional<std::size_t> best;
  if (!translations.empty()) {
    const auto km = kmeans(translations, cfg);
    const Point2 mu = km.centers[km.dominant];
    double bestD = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < translations.size(); ++j) {
      if (used.count(j)) continue;
      const double d = std::sqrt(squaredDistance(translations[j], mu));
      if (d < bestD) {
        bestD = d;
        best = j;
      }
    }
  }
  if (!best) throw ExhaustedAnchorsError("every anchor candidate has been used");
  return *best;
}

struct BagConfig {
  PairConfig pair{};
  std::size_t initialAnchor = 0;
  bool extraTrial = true;
  KMeansConfig kmeans{};
};

struct ViewRegistration {
  std::size_t view = 0;
  std::optional<RegistrationOutcome> outcome;
  std::string failure;  // stage-tagged message when outcome is empty

  bool valid() const { return outcome && outcome->valid; }
};

struct TrialRecord {
  std::size_t anchor = 0;
  bool success = false;
  double clusterDistance = std::numeric_limits<double>::infinity();
};

struct BagRegistration {
  bool success = false;
  std::size_t anchorIndex = 0;
  std::size_t viewCount = 0;
  std::vector<ViewRegistration> outcomes;  // moving views only, ascending view index
  std::vector<std::size_t> usedAnchors;    // in trial order
  std::vector<TrialRecord> trials;
  double clusterDistance = std::numeric_limits<double>::infinity();

  /// Transform from `view` into the anchor frame; identity for the anchor itself.
  Homography homographyFor(std::size_t view) const {
    if (view == anchorIndex) return Homography::identity();
    for (const auto& o : outcomes)
      if (o.view == view && o.outcome) return o.outcome->homography;
    throw ArgumentError("no registration for view " + std::to_string(view));
  }
};

namespace detail {

struct Trial {
  std::size_t anchor = 0;
  std::vector<ViewRegistration> outcomes;
  bool allValid = false;
  std::vector<std::size_t> translatedViews;
  std::vector<Point2> translations;
  double clusterDistance = std::numeric_limits<double>::infinity();
};

inline Trial runTrial(std::span<const std::vector<Keypoint>> kps, std::size_t anchor, const BagConfig& cfg) {
  Trial t;
  t.anchor = anchor;
  t.allValid = true;
  for (std::size_t v = 0; v < kps.size(); ++v) {
    if (v == anchor) continue;
    ViewRegistration vr;
    vr.view = v;
    try {
      vr.outcome = registerKeypoints(kps[v], kps[anchor], cfg.pair);
      t.translatedViews.push_back(v);
      t.translations.push_back({vr.outcome->decomposition.tx, vr.outcome->decomposition.ty});
    } catch (const RegistrationError& e) {
      vr.failure = e.what();
    }
    t.allValid = t.allValid && vr.valid();
    t.outcomes.push_back(std::move(vr));
  }
  if (!t.translations.empty()) {
    const auto km = kmeans(t.translations, cfg.kmeans);
    const Point2 mu = km.centers[km.dominant];
    t.clusterDistance = std::hypot(mu.x, mu.y);  // the anchor sits at the origin of its own frame
  }
  return t;
}

/// Next anchor from a trial: clustered candidates first, then views without a transform.
inline std::optional<std::size_t> nextAnchor(const Trial& t, const std::set<std::size_t>& used,
                                             const KMeansConfig& cfg) {
  std::set<std::size_t> usedLocal;
  for (std::size_t j = 0; j < t.translatedViews.size(); ++j)
    if (used.count(t.translatedViews[j])) usedLocal.insert(j);
  try {
    return t.translatedViews[selectNextAnchor(t.translations, usedLocal, cfg)];
  } catch (const ExhaustedAnchorsError&) {
  }
  for (const auto& o : t.outcomes)
    if (!o.outcome && !used.count(o.view)) return o.view;
  return std::nullopt;
}

}  // namespace detail

/// Registers every view into one anchor frame, re-anchoring until all pairings validate.
/// A bag that fails on every anchor is reported with success == false.
inline BagRegistration registerBag(std::span<const VesselnessMap> views, const BagConfig& cfg = {}) {
  if (views.size() < 2) throw ArgumentError("registerBag needs at least two views");
  if (cfg.initialAnchor >= views.size()) throw ArgumentError("initial anchor out of range");

  std::vector<std::vector<Keypoint>> kps(views.size());
  for (std::size_t v = 0; v < views.size(); ++v) {
    try {
      kps[v] = detectKeypoints(views[v], cfg.pair.detector);
    } catch (const ArgumentError&) {
      // Too small to describe: every pairing with it fails at detection.
    }
  }

  BagRegistration out;
  out.viewCount = views.size();
  std::set<std::size_t> used;
  std::optional<detail::Trial> accepted;
  detail::Trial last;
  std::optional<std::size_t> anchor = cfg.initialAnchor;
  while (anchor) {
    last = detail::runTrial(kps, *anchor, cfg);
    used.insert(*anchor);
    out.usedAnchors.push_back(*anchor);
    out.trials.push_back({*anchor, last.allValid, last.clusterDistance});
    if (last.allValid) {
      accepted = last;
      break;
    }
    anchor = detail::nextAnchor(last, used, cfg.kmeans);
  }

  if (accepted && cfg.extraTrial) {
    if (auto alt = detail::nextAnchor(*accepted, used, cfg.kmeans)) {
      auto second = detail::runTrial(kps, *alt, cfg);
      used.insert(*alt);
      out.usedAnchors.push_back(*alt);
      out.trials.push_back({*alt, second.allValid, second.clusterDistance});
      if (second.allValid && second.clusterDistance < accepted->clusterDistance) accepted = std::move(second);
    }
  }

  const detail::Trial& chosen = accepted ? *accepted : last;
  out.success = accepted.has_value();
  out.anchorIndex = chosen.anchor;
  out.outcomes = chosen.outcomes;
  out.clusterDistance = chosen.clusterDistance;
  return out;
}

}  // namespace grinadapt::registration
