#pragma once

// Region-wise fusion of registered probability maps into integrated labels.
//
// Two registration stages feed the fusion: stage one aligns the macula-centred
// scans; stage two aligns the fused macula composite with the disc-centred,
// wide-field and auxiliary maps. Everything is fused in the stage-one anchor
// frame, then artery/vein channels are carried back into each view.

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "grinadapt/core.hpp"
#include "grinadapt/geometry.hpp"
#include "grinadapt/registration.hpp"

namespace grinadapt::integration {

using geometry::Homography;

struct BagView {
  std::string domain;
  ScanKind kind = ScanKind::Macula6;
  ProbabilityMap prediction;
  std::vector<ProbabilityMap> replicas;  // optional model ensemble; averaged when present
};

struct SubjectBag {
  std::string subjectId;
  std::vector<BagView> views;
};

/// Maps auxiliary-modality class indices onto CAVF ids. Only artery and vein are
/// shared with the OCTA label space; every other source class lands on background.
struct AuxiliaryClassMap {
  std::vector<std::uint8_t> target;
};

inline ProbabilityMap ingestAuxiliary(const ProbabilityMap& aux, const AuxiliaryClassMap& classMap) {
  if (classMap.target.size() != aux.channels())
    throw LayoutError("auxiliary class map size does not match channel count");
  ProbabilityMap out(aux.height(), aux.width(), kNumClasses);
  for (std::size_t i = 0; i < aux.pixelCount(); ++i) {
    auto src = aux.pixel(i);
    auto dst = out.pixel(i);
    for (std::size_t c = 0; c < src.size(); ++c) {
      std::uint8_t t = classMap.target[c];
      if (t != classId(CavfClass::Artery) && t != classId(CavfClass::Vein)) t = classId(CavfClass::Background);
      dst[t] += src[c];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Common space
// ---------------------------------------------------------------------------

inline constexpr std::size_t kCommonSize = 512;
inline constexpr std::size_t kMaculaWindow = 256;

/// Zero padding for the 6 mm fields (same pixel pitch as the common canvas);
/// resampling for the 12 mm field and the auxiliary modality.
inline bool isPadded(ScanKind k) { return k == ScanKind::Macula6 || k == ScanKind::Disc6; }

/// Original-pixel -> common-space transform for a square map of side `n`.
inline Homography commonTransform(ScanKind kind, std::size_t n, std::size_t common = kCommonSize) {
  if (isPadded(kind)) {
    if (n > common) throw ArgumentError("6 mm map larger than the common canvas");
    const double pad = static_cast<double>((common - n) / 2);
    return Homography::translation(pad, pad);
  }
  const double s = static_cast<double>(common) / static_cast<double>(n);
  return Homography::affine(s, 0, 0.5 * s - 0.5, 0, s, 0.5 * s - 0.5);
}

/// Bilinear resize with pixel-centre alignment and edge clamping.
template <class Tag>
PixelGrid<Tag> resizeBilinear(const PixelGrid<Tag>& src, std::size_t outH, std::size_t outW) {
  PixelGrid<Tag> out(outH, outW, src.channels());
  const double sy = static_cast<double>(src.height()) / outH, sx = static_cast<double>(src.width()) / outW;
  for (std::size_t y = 0; y < outH; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.height() - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, src.height() - 1);
    const double ay = fy - y0;
    for (std::size_t x = 0; x < outW; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.width() - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, src.width() - 1);
      const double ax = fx - x0;
      auto o = out.pixel(y, x);
      auto p00 = src.pixel(y0, x0), p01 = src.pixel(y0, x1), p10 = src.pixel(y1, x0), p11 = src.pixel(y1, x1);
      for (std::size_t c = 0; c < o.size(); ++c)
        o[c] = (1 - ay) * ((1 - ax) * p00[c] + ax * p01[c]) + ay * ((1 - ax) * p10[c] + ax * p11[c]);
    }
  }
  return out;
}

template <class Tag>
PixelGrid<Tag> toCommonSpace(const PixelGrid<Tag>& map, ScanKind kind, std::size_t common = kCommonSize) {
  if (map.height() != map.width()) throw ArgumentError("toCommonSpace expects a square map");
  const std::size_t n = map.height();
  if (n == common) return map;
  if (isPadded(kind)) {
    if (n > common) throw ArgumentError("6 mm map larger than the common canvas");
    const std::size_t pad = (common - n) / 2;
    PixelGrid<Tag> out(common, common, map.channels());
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) std::ranges::copy(map.pixel(y, x), out.pixel(y + pad, x + pad).begin());
    return out;
  }
  return resizeBilinear(map, common, common);
}

inline ProbabilityMap ensembleAverage(std::span<const ProbabilityMap> replicas) {
  if (replicas.empty()) throw ArgumentError("ensembleAverage needs at least one replica");
  ProbabilityMap out(replicas[0].height(), replicas[0].width(), replicas[0].channels());
  for (const auto& r : replicas) {
    if (!r.sameShape(out)) throw ArgumentError("ensemble replicas differ in shape");
    for (std::size_t i = 0; i < r.values().size(); ++i) out.values()[i] += r.values()[i];
  }
  const double n = static_cast<double>(replicas.size());
  for (double& v : out.values()) v /= n;
  return out;
}

inline ProbabilityMap viewPrediction(const BagView& v) {
  return v.replicas.empty() ? v.prediction : ensembleAverage(v.replicas);
}

// ---------------------------------------------------------------------------
// Regions
// ---------------------------------------------------------------------------

enum class Region : std::uint8_t { Macula = 0, Disc = 1, Other = 2 };

inline std::string_view toString(Region r) {
  switch (r) {
    case Region::Macula: return "macula";
    case Region::Disc: return "disc";
    case Region::Other: return "other";
  }
  return "unknown";
}

struct RegionPartition {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<Region> region;
  std::optional<geometry::Point2> discCenter;
  double discRadius = 0.0;
  std::size_t maculaTop = 0;
  std::size_t maculaLeft = 0;
  std::size_t maculaSize = 0;

  Region at(std::size_t y, std::size_t x) const { return region[y * width + x]; }
  bool inMacula(double y, double x) const {
    return y >= maculaTop - 0.5 && x >= maculaLeft - 0.5 && y < maculaTop + maculaSize - 0.5 &&
           x < maculaLeft + maculaSize - 0.5;
  }
};

/// Central macula window wins over the disc disk; everything else is "other".
inline RegionPartition buildPartition(std::size_t height, std::size_t width,
                                      std::optional<geometry::Point2> discCenter, double discRadius,
                                      std::size_t maculaSize = kMaculaWindow) {
  if (maculaSize > height || maculaSize > width) throw ArgumentError("macula window exceeds canvas");
  if (discCenter && (discCenter->x < 0 || discCenter->y < 0 || discCenter->x > width - 1.0 ||
                     discCenter->y > height - 1.0))
    throw ArgumentError("disc centre lies outside the canvas");
  RegionPartition p;
  p.height = height;
  p.width = width;
  p.discCenter = discCenter;
  p.discRadius = discRadius;
  p.maculaSize = maculaSize;
  p.maculaTop = (height - maculaSize) / 2;
  p.maculaLeft = (width - maculaSize) / 2;
  p.region.assign(height * width, Region::Other);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      Region r = Region::Other;
      if (y >= p.maculaTop && y < p.maculaTop + maculaSize && x >= p.maculaLeft && x < p.maculaLeft + maculaSize)
        r = Region::Macula;
      else if (discCenter && std::hypot(x - discCenter->x, y - discCenter->y) <= discRadius)
        r = Region::Disc;
      p.region[y * width + x] = r;
    }
  return p;
}

// ---------------------------------------------------------------------------
// Fusion
// ---------------------------------------------------------------------------

inline constexpr double kCoverageTol = 1e-6;

/// A view carries data at a pixel when its channels sum to one there (warped-in footprint).
inline bool covers(std::span<const double> p) {
  double s = 0.0;
  for (double v : p) s += v;
  return s >= 1.0 - kCoverageTol;
}

/// Fills the pixels of `region` only; pixels outside it are left zero.
/// Where some selected view (covering the pixel) has its argmax in `fusedClasses`,
/// the output is the mean of the covering selected views; otherwise it keeps the anchor's
/// vector, or the lowest-indexed covering view's when the anchor does not cover the pixel.
/// Views are visited in index order, so the result does not depend on selection order.
inline ProbabilityMap fuseRegion(std::span<const ProbabilityMap> maps, std::span<const std::size_t> selected,
                                 const RegionPartition& part, Region region,
                                 std::span<const std::uint8_t> fusedClasses,
                                 std::optional<std::size_t> anchor = std::nullopt) {
  if (selected.empty()) throw PolicyError("empty view selection for region " + std::string(toString(region)));
  for (auto j : selected) {
    if (j >= maps.size()) throw ArgumentError("selected view out of range");
    if (maps[j].height() != part.height || maps[j].width() != part.width ||
        maps[j].channels() != maps[selected[0]].channels())
      throw ArgumentError("fused maps must share the partition's common space");
  }
  const std::size_t C = maps[selected[0]].channels();
  ProbabilityMap out(part.height, part.width, C);
  std::vector<std::size_t> order(selected.begin(), selected.end()), cover;
  std::ranges::sort(order);
  order.erase(std::unique(order.begin(), order.end()), order.end());
  for (std::size_t i = 0; i < part.region.size(); ++i) {
    if (part.region[i] != region) continue;
    cover.clear();
    bool fuse = false;
    for (auto j : order) {
      auto p = maps[j].pixel(i);
      if (!covers(p)) continue;
      cover.push_back(j);
      const auto a = static_cast<std::uint8_t>(argmax(p));
      fuse = fuse || std::find(fusedClasses.begin(), fusedClasses.end(), a) != fusedClasses.end();
    }
    if (cover.empty()) continue;
    auto o = out.pixel(i);
    if (!fuse) {
      const bool anchorCovers = anchor && std::ranges::find(cover, *anchor) != cover.end();
      std::ranges::copy(maps[anchorCovers ? *anchor : cover.front()].pixel(i), o.begin());
      continue;
    }
    // Mean taken as first + mean offset, so identical views reproduce their values exactly.
    const auto base = maps[cover.front()].pixel(i);
    const double n = static_cast<double>(cover.size());
    for (std::size_t c = 0; c < C; ++c) {
      double d = 0.0;
      for (auto j : cover) d += maps[j].pixel(i)[c] - base[c];
      o[c] = base[c] + d / n;
    }
  }
  return out;
}

struct RegionPolicy {
  std::vector<ScanKind> kinds;
  std::vector<std::uint8_t> fusedClasses;
};

struct IntegrationPolicy {
  RegionPolicy macula{{ScanKind::Macula6, ScanKind::Macula12},
                      {classId(CavfClass::Artery), classId(CavfClass::Vein), classId(CavfClass::Faz)}};
  RegionPolicy disc{{ScanKind::Disc6, ScanKind::Auxiliary}, {classId(CavfClass::Artery), classId(CavfClass::Vein)}};
  RegionPolicy other{{ScanKind::Macula12, ScanKind::Auxiliary},
                     {classId(CavfClass::Artery), classId(CavfClass::Vein)}};
  std::vector<std::uint8_t> backTransformClasses{classId(CavfClass::Artery), classId(CavfClass::Vein)};
  double discRadius = 96.0;
  std::size_t commonSize = kCommonSize;
  std::size_t maculaSize = kMaculaWindow;
};

struct IntegratedLabel {
  ProbabilityMap softMap;  // in the view's original coordinates
  LabelMap hardLabel;      // argmax of softMap, ties to the lowest class id
};

struct RegionUse {
  Region region = Region::Macula;
  std::vector<std::size_t> views;  // bag view indices
  bool fallback = false;
  std::string note;
};

struct IntegrationResult {
  std::vector<IntegratedLabel> labels;  // one per bag view
  ProbabilityMap combined;              // stage-one anchor frame
  RegionPartition partition;
  std::vector<RegionUse> regions;
};

/// Bag view indices for each registration stage. Stage two is prefixed by the
/// macula composite, so its registration list is {composite, stageTwo...}.
struct StagePlan {
  std::vector<std::size_t> stageOne;
  std::vector<std::size_t> stageTwo;
};

inline StagePlan planStages(const SubjectBag& bag) {
  StagePlan p;
  for (std::size_t i = 0; i < bag.views.size(); ++i) {
    const ScanKind k = bag.views[i].kind;
    if (k == ScanKind::Macula6 || k == ScanKind::Macula12) p.stageOne.push_back(i);
    if (k == ScanKind::Disc6 || k == ScanKind::Macula12 || k == ScanKind::Auxiliary) p.stageTwo.push_back(i);
  }
  return p;
}

/// Registration result for a single view (nothing to align).
inline registration::BagRegistration singleViewRegistration() {
  registration::BagRegistration r;
  r.success = true;
  r.viewCount = 1;
  r.usedAnchors = {0};
  r.clusterDistance = 0.0;
  return r;
}

inline std::vector<ProbabilityMap> commonSpaceMaps(const SubjectBag& bag, std::size_t common = kCommonSize) {
  std::vector<ProbabilityMap> out;
  out.reserve(bag.views.size());
  for (const auto& v : bag.views) {
    auto p = viewPrediction(v);
    requireCavf(p, "integration");
    out.push_back(toCommonSpace(p, v.kind, common));
  }
  return out;
}

namespace detail {

inline std::vector<std::size_t> selectByKind(const SubjectBag& bag, std::span<const std::size_t> candidates,
                                             std::span<const ScanKind> kinds, std::optional<std::size_t> first) {
  std::vector<std::size_t> out;
  if (first) out.push_back(*first);
  for (auto i : candidates) {
    if (first && i == *first) continue;
    if (std::find(kinds.begin(), kinds.end(), bag.views[i].kind) != kinds.end()) out.push_back(i);
  }
  if (first && std::find(kinds.begin(), kinds.end(), bag.views[*first].kind) == kinds.end()) out.erase(out.begin());
  return out;
}

}  // namespace detail

/// Stage-one result: fused macula window in the stage-one anchor frame, zero elsewhere.
inline ProbabilityMap maculaComposite(const SubjectBag& bag, const registration::BagRegistration& reg1,
                                      const IntegrationPolicy& policy = {}) {
  const auto plan = planStages(bag);
  if (plan.stageOne.empty()) throw PolicyError("no macula-centred view for macular fusion");
  if (!reg1.success) throw ArgumentError("macula registration did not succeed");
  const auto common = commonSpaceMaps(bag, policy.commonSize);
  const long S = static_cast<long>(policy.commonSize);
  std::vector<ProbabilityMap> warped(bag.views.size(), ProbabilityMap(policy.commonSize, policy.commonSize, kNumClasses));
  for (std::size_t k = 0; k < plan.stageOne.size(); ++k)
    warped[plan.stageOne[k]] = geometry::warp(common[plan.stageOne[k]], reg1.homographyFor(k), S, S);
  const auto part = buildPartition(policy.commonSize, policy.commonSize, std::nullopt, 0.0, policy.maculaSize);
  const std::size_t anchorView = plan.stageOne[reg1.anchorIndex];
  auto sel = detail::selectByKind(bag, plan.stageOne, policy.macula.kinds, anchorView);
  if (sel.empty()) sel.push_back(anchorView);
  return fuseRegion(warped, sel, part, Region::Macula, policy.macula.fusedClasses, anchorView);
}

/// Overwrites `classes` of `target` with `source`, rescaling the remaining channels so the
/// pixel still sums to one. Leftover mass with no untouched channel to carry it goes to background.
inline void overwriteChannels(std::span<double> target, std::span<const double> source,
                              std::span<const std::uint8_t> classes) {
  double replaced = 0.0, restPrior = 0.0;
  for (std::size_t c = 0; c < target.size(); ++c) {
    const bool sel = std::find(classes.begin(), classes.end(), c) != classes.end();
    if (sel) {
      target[c] = source[c];
      replaced += source[c];
    } else {
      restPrior += target[c];
    }
  }
  const double rest = std::max(0.0, 1.0 - replaced);
  if (restPrior > 0.0) {
    const double f = rest / restPrior;
    for (std::size_t c = 0; c < target.size(); ++c)
      if (std::find(classes.begin(), classes.end(), c) == classes.end()) target[c] *= f;
  } else {
    target[classId(CavfClass::Background)] += rest;
  }
}

inline IntegrationResult integrateSubject(const SubjectBag& bag, const registration::BagRegistration& reg1,
                                          const registration::BagRegistration& reg2,
                                          const IntegrationPolicy& policy = {}) {
  const auto plan = planStages(bag);
  if (plan.stageOne.empty()) throw PolicyError("no macula-centred view for macular fusion");
  if (!reg1.success || !reg2.success) throw ArgumentError("integration requires successful registrations");
  if (reg1.viewCount != plan.stageOne.size() || reg2.viewCount != plan.stageTwo.size() + 1)
    throw ArgumentError("registration view counts do not match the bag's stage plan");

  const std::size_t S = policy.commonSize;
  const long SL = static_cast<long>(S);
  const auto common = commonSpaceMaps(bag, S);

  // Per-view transforms into the stage-one anchor frame.
  std::vector<std::optional<Homography>> toAnchor1(bag.views.size()), toAnchor1Stage2(bag.views.size());
  for (std::size_t k = 0; k < plan.stageOne.size(); ++k) toAnchor1[plan.stageOne[k]] = reg1.homographyFor(k);
  const Homography compositeToAnchor2 = reg2.homographyFor(0);
  const Homography anchor2ToAnchor1 = geometry::invert(compositeToAnchor2);
  for (std::size_t k = 0; k < plan.stageTwo.size(); ++k)
    toAnchor1Stage2[plan.stageTwo[k]] = anchor2ToAnchor1 * reg2.homographyFor(k + 1);

  IntegrationResult result;

  // Disc centre: centre of the first disc-centred scan, carried into the anchor frame.
  std::optional<geometry::Point2> discCenter;
  for (auto i : plan.stageTwo) {
    if (bag.views[i].kind != ScanKind::Disc6) continue;
    const std::size_t n = common[i].empty() ? 0 : viewPrediction(bag.views[i]).width();
    const double c = (static_cast<double>(n) - 1.0) / 2.0;
    const auto centreCommon = commonTransform(ScanKind::Disc6, n, S).apply({c, c});
    if (auto p = toAnchor1Stage2[i]->apply(*centreCommon);
        p && p->x >= 0 && p->y >= 0 && p->x <= S - 1.0 && p->y <= S - 1.0)
      discCenter = *p;
    break;
  }
  result.partition = buildPartition(S, S, discCenter, policy.discRadius, policy.maculaSize);
  const auto& part = result.partition;

  std::vector<ProbabilityMap> stage1(bag.views.size()), stage2(bag.views.size());
  for (auto i : plan.stageOne) stage1[i] = geometry::warp(common[i], *toAnchor1[i], SL, SL);
  for (auto i : plan.stageTwo) stage2[i] = geometry::warp(common[i], *toAnchor1Stage2[i], SL, SL);
  for (auto& m : stage1)
    if (m.empty()) m = ProbabilityMap(S, S, kNumClasses);
  for (auto& m : stage2)
    if (m.empty()) m = ProbabilityMap(S, S, kNumClasses);

  const std::size_t anchor1View = plan.stageOne[reg1.anchorIndex];
  ProbabilityMap combined(S, S, kNumClasses);
  auto paste = [&](const ProbabilityMap& region, Region r) {
    for (std::size_t i = 0; i < part.region.size(); ++i)
      if (part.region[i] == r) std::ranges::copy(region.pixel(i), combined.pixel(i).begin());
  };

  // Macula.
  {
    RegionUse use{Region::Macula, {}, false, ""};
    auto sel = detail::selectByKind(bag, plan.stageOne, policy.macula.kinds, anchor1View);
    if (sel.empty()) {
      use.fallback = true;
      use.note = "no view of the macula policy kinds; anchor prediction kept";
      sel.push_back(anchor1View);
    }
    use.views = sel;
    paste(fuseRegion(stage1, sel, part, Region::Macula, policy.macula.fusedClasses, anchor1View), Region::Macula);
    result.regions.push_back(std::move(use));
  }
  // Disc and other regions from the second stage.
  for (auto [r, rp] : {std::pair{Region::Disc, &policy.disc}, std::pair{Region::Other, &policy.other}}) {
    RegionUse use{r, {}, false, ""};
    auto sel = detail::selectByKind(bag, plan.stageTwo, rp->kinds, std::nullopt);
    if (r == Region::Disc && !discCenter) {
      use.note = "no disc-centred scan; disc region empty";
      result.regions.push_back(std::move(use));
      continue;
    }
    if (sel.empty()) {
      use.fallback = true;
      use.note = "no view of the region policy kinds; anchor prediction kept";
      use.views = {anchor1View};
      paste(fuseRegion(stage1, std::vector<std::size_t>{anchor1View}, part, r, rp->fusedClasses), r);
    } else {
      use.views = sel;
      paste(fuseRegion(stage2, sel, part, r, rp->fusedClasses), r);
    }
    result.regions.push_back(std::move(use));
  }

  // Reversion into each view's own coordinates.
  result.labels.resize(bag.views.size());
  for (std::size_t v = 0; v < bag.views.size(); ++v) {
    const auto& view = bag.views[v];
    ProbabilityMap soft = viewPrediction(view);
    const Homography toCommon = commonTransform(view.kind, soft.width(), S);
    std::array<double, kNumClasses> sample{};
    for (std::size_t y = 0; y < soft.height(); ++y)
      for (std::size_t x = 0; x < soft.width(); ++x) {
        const auto c = toCommon.apply({static_cast<double>(x), static_cast<double>(y)});
        std::optional<geometry::Point2> a;
        if (toAnchor1[v]) {
          a = toAnchor1[v]->apply(*c);
          if (a && toAnchor1Stage2[v] && !part.inMacula(a->y, a->x)) a = toAnchor1Stage2[v]->apply(*c);
        } else if (toAnchor1Stage2[v]) {
          a = toAnchor1Stage2[v]->apply(*c);
        }
        if (!a) continue;
        geometry::sampleBilinear(combined, a->x, a->y, std::span<double>(sample));
        if (!covers(sample)) continue;
        overwriteChannels(soft.pixel(y, x), sample, policy.backTransformClasses);
      }
    result.labels[v].hardLabel = argmaxLabels(soft);
    result.labels[v].softMap = std::move(soft);
  }
  result.combined = std::move(combined);
  return result;
}

}  // namespace grinadapt::integration
