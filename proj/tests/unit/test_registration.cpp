#include <gtest/gtest.h>

#include <random>

#include "grinadapt/pipeline.hpp"
#include "grinadapt/registration.hpp"
#include "grinadapt/synth.hpp"

using namespace grinadapt;
using namespace grinadapt::registration;
using geometry::Homography;
using geometry::Point2;

namespace {

synth::SynthConfig maculaOnly(std::size_t views) {
  synth::SynthConfig cfg;
  cfg.views.clear();
  for (std::size_t i = 0; i < views; ++i) cfg.views.push_back({"D1", ScanKind::Macula6, 256, {0, 0}, {}, {}, true});
  return cfg;
}

std::vector<VesselnessMap> bagVesselness(const synth::Subject& s) {
  std::vector<std::size_t> idx(s.bag.views.size());
  std::iota(idx.begin(), idx.end(), 0);
  return pipeline::commonVesselness(s.bag, idx, integration::kCommonSize);
}

VesselnessMap crop(const VesselnessMap& v, std::size_t top, std::size_t left, std::size_t n) {
  VesselnessMap out(n, n, 1);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) out(y, x, 0) = v(top + y, left + x, 0);
  return out;
}

VesselnessMap noiseMap(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  VesselnessMap v(n, n, 1);
  for (double& x : v.values()) x = u(rng);
  return v;
}

Keypoint randomKeypoint(std::mt19937_64& rng, std::size_t dim) {
  std::normal_distribution<double> n(0.0, 1.0);
  Keypoint k;
  k.descriptor.resize(dim);
  double s = 0.0;
  for (double& v : k.descriptor) s += (v = n(rng)) * v;
  for (double& v : k.descriptor) v /= std::sqrt(s);
  return k;
}

std::vector<Correspondence> planted(const Homography& h, std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 400.0);
  std::vector<Correspondence> c;
  for (std::size_t i = 0; i < n; ++i) {
    const Point2 p{u(rng), u(rng)};
    c.push_back({p, *h.apply(p)});
  }
  return c;
}

}  // namespace

TEST(Vesselness, ChannelSum) {
  ProbabilityMap m(1, 3, kNumClasses);
  m.pixel(0)[0] = 1.0;
  m.pixel(1)[2] = 1.0;
  const double mixed[5] = {0.2, 0.3, 0.25, 0.25, 0};
  std::copy(mixed, mixed + 5, m.pixel(2).begin());
  const auto v = extractVesselness(m);
  EXPECT_EQ(v(0, 0, 0), 0.0);
  EXPECT_EQ(v(0, 1, 0), 1.0);
  EXPECT_NEAR(v(0, 2, 0), 0.8, 1e-15);
}

TEST(Vesselness, RejectsWrongLayout) {
  EXPECT_THROW(extractVesselness(ProbabilityMap(4, 4, 3)), LayoutError);
}

TEST(Detect, ZeroMapHasNoKeypoints) {
  EXPECT_TRUE(detectKeypoints(VesselnessMap(64, 64, 1)).empty());
}

TEST(Detect, TooSmallImageThrows) {
  EXPECT_THROW(detectKeypoints(VesselnessMap(31, 64, 1)), ArgumentError);
}

TEST(Detect, CrossOnBlack) {
  VesselnessMap v(64, 64, 1);
  for (int d = -1; d <= 1; ++d) {
    v(32 + d, 30, 0) = 1.0;
    v(32, 30 + d, 0) = 1.0;
  }
  const auto kps = detectKeypoints(v);
  ASSERT_FALSE(kps.empty());
  // Oracle: location of the strongest Harris response by exhaustive scan.
  const auto resp = harrisResponse(v, {});
  const auto best = std::max_element(resp.begin(), resp.end()) - resp.begin();
  const double by = double(best / 64);
  const double bx = double(best % 64);
  EXPECT_LE(std::hypot(by - 32, bx - 30), 2.0);
  bool near = false;
  for (const auto& k : kps) near = near || std::hypot(k.y - 32, k.x - 30) <= 2.0;
  EXPECT_TRUE(near);
}

TEST(Detect, InvariantsOnVesselMap) {
  const auto s = synth::generateSubject(maculaOnly(1), 4);
  const auto v = bagVesselness(s)[0];
  const auto kps = detectKeypoints(v);
  ASSERT_GT(kps.size(), 50u);
  EXPECT_LE(kps.size(), DetectorConfig{}.maxKeypoints);
  for (const auto& k : kps) {
    EXPECT_GE(k.x, 0.0);
    EXPECT_GE(k.y, 0.0);
    EXPECT_LE(k.x, double(v.width() - 1));
    EXPECT_LE(k.y, double(v.height() - 1));
    ASSERT_EQ(k.descriptor.size(), kDescriptorSize);
    double s2 = 0.0;
    for (double d : k.descriptor) s2 += d * d;
    EXPECT_NEAR(std::sqrt(s2), 1.0, 1e-6);
  }
}

TEST(Detect, RotationByNinetyDegrees) {
  const auto s = synth::generateSubject(maculaOnly(1), 5);
  const auto v = crop(bagVesselness(s)[0], 160, 160, 160);
  const std::size_t n = v.height();
  VesselnessMap r(n, n, 1);  // r(y, x) = v(n-1-x, y): 90 degrees clockwise
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) r(y, x, 0) = v(n - 1 - x, y, 0);
  DetectorConfig cfg;
  cfg.maxKeypoints = 10000;
  const auto a = detectKeypoints(v, cfg), b = detectKeypoints(r, cfg);
  ASSERT_FALSE(a.empty());
  std::size_t matched = 0, checked = 0;
  for (std::size_t i = 0; i < std::min<std::size_t>(a.size(), 30); ++i) {
    ++checked;
    const double ex = double(n - 1) - a[i].y, ey = a[i].x;
    for (const auto& k : b)
      if (std::hypot(k.x - ex, k.y - ey) <= 2.0) {
        ++matched;
        break;
      }
  }
  EXPECT_EQ(matched, checked);
}

TEST(Match, IdenticalListsGiveIdentity) {
  std::mt19937_64 rng(1);
  std::vector<Keypoint> a;
  for (int i = 0; i < 40; ++i) a.push_back(randomKeypoint(rng, 32));
  const auto m = matchDescriptors(a, a, 0.8);
  ASSERT_EQ(m.size(), a.size());
  for (const auto& p : m) EXPECT_EQ(p.a, p.b);
}

TEST(Match, RatioTestHoldsOnEveryPair) {
  std::mt19937_64 rng(2);
  std::vector<Keypoint> a, b;
  for (int i = 0; i < 60; ++i) a.push_back(randomKeypoint(rng, 16));
  for (int i = 0; i < 60; ++i) b.push_back(randomKeypoint(rng, 16));
  for (const auto& p : matchDescriptors(a, b, 0.8)) {
    std::vector<double> d;
    for (const auto& k : b) {
      double s = 0.0;
      for (std::size_t j = 0; j < 16; ++j) s += std::pow(a[p.a].descriptor[j] - k.descriptor[j], 2);
      d.push_back(std::sqrt(s));
    }
    std::sort(d.begin(), d.end());
    EXPECT_LT(d[0], 0.8 * d[1]);
  }
}

TEST(Match, NoisyDuplicatesMostlyCorrect) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> noise(0.0, 0.1 / std::sqrt(64.0));
  std::vector<Keypoint> a, b;
  for (int i = 0; i < 100; ++i) {
    a.push_back(randomKeypoint(rng, 64));
    Keypoint k = a.back();
    for (double& v : k.descriptor) v += noise(rng);
    b.push_back(k);
  }
  std::shuffle(b.begin(), b.end(), rng);
  // Oracle: brute-force nearest neighbour by descriptor.
  auto nearest = [&](const Keypoint& q) {
    std::size_t best = 0;
    double bd = 1e300;
    for (std::size_t j = 0; j < b.size(); ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < 64; ++t) s += std::pow(q.descriptor[t] - b[j].descriptor[t], 2);
      if (s < bd) bd = s, best = j;
    }
    return best;
  };
  const auto m = matchDescriptors(a, b, 0.8);
  std::size_t correct = 0;
  for (const auto& p : m) correct += nearest(a[p.a]) == p.b;
  EXPECT_GE(double(correct), 0.9 * double(a.size()));
}

TEST(Match, Preconditions) {
  std::vector<Keypoint> a(1), b(1);
  a[0].descriptor = {1.0, 0.0};
  b[0].descriptor = {1.0};
  EXPECT_THROW(matchDescriptors(a, b, 0.8), ArgumentError);
  EXPECT_THROW(matchDescriptors(a, a, 0.0), ArgumentError);
  EXPECT_TRUE(matchDescriptors({}, a, 0.8).empty());
}

TEST(Estimate, PlantedTranslation) {
  std::mt19937_64 rng(4);
  const auto c = planted(Homography::translation(12, -7), 40, rng);
  const auto o = estimateTransform(c, {});
  EXPECT_NEAR(o.decomposition.tx, 12.0, 1e-6);
  EXPECT_NEAR(o.decomposition.ty, -7.0, 1e-6);
  EXPECT_TRUE(o.valid);
  EXPECT_EQ(o.inlierCount, 40u);
  EXPECT_DOUBLE_EQ(o.inlierRatio, 1.0);
}

TEST(Estimate, SimilarityWithOutliers) {
  std::mt19937_64 rng(5);
  const auto h = Homography::similarity(1.1, 5.0, 20, -10);
  auto c = planted(h, 70, rng);
  std::uniform_real_distribution<double> u(0.0, 400.0);
  for (int i = 0; i < 30; ++i) c.push_back({{u(rng), u(rng)}, {u(rng), u(rng)}});
  std::shuffle(c.begin(), c.end(), rng);
  const auto o = estimateTransform(c, {});
  EXPECT_NEAR(o.decomposition.sx, 1.1, 0.01);
  EXPECT_NEAR(o.decomposition.sy, 1.1, 0.01);
  EXPECT_NEAR(o.decomposition.theta, 5.0, 0.5);
  EXPECT_GE(o.inlierCount, 70u);
  EXPECT_GE(o.inlierRatio, 0.0);
  EXPECT_LE(o.inlierRatio, 1.0);
}

TEST(Estimate, FullHomographyRecoversPerspective) {
  std::mt19937_64 rng(6);
  const Homography h({1.02, 0.05, 3, -0.04, 0.98, -5, 2e-5, -1e-5, 1});
  RansacConfig cfg;
  cfg.fullHomography = true;
  const auto o = estimateTransform(planted(h, 30, rng), cfg);
  EXPECT_LE(o.homography.maxAbsDiff(h), 1e-6);
}

TEST(Estimate, TooFewCorrespondences) {
  std::mt19937_64 rng(7);
  try {
    estimateTransform(planted(Homography::identity(), 3, rng), {});
    FAIL();
  } catch (const RegistrationError& e) {
    EXPECT_EQ(e.stage(), Stage::Estimation);
  }
}

TEST(Estimate, TooFewInliers) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 400.0);
  std::vector<Correspondence> c;
  for (int i = 0; i < 40; ++i) c.push_back({{u(rng), u(rng)}, {u(rng), u(rng)}});
  EXPECT_THROW(estimateTransform(c, {}), RegistrationError);
}

TEST(Estimate, ValidImpliesValidation) {
  std::mt19937_64 rng(9);
  const auto o = estimateTransform(planted(Homography::similarity(2.5, 0), 30, rng), {});
  EXPECT_FALSE(o.valid);
  EXPECT_TRUE(o.validation.violates(geometry::Component::ScaleX));
}

TEST(Estimate, DeterministicUnderSeed) {
  std::mt19937_64 rng(10);
  auto c = planted(Homography::similarity(0.95, -3, 4, 2), 50, rng);
  std::uniform_real_distribution<double> u(0.0, 400.0);
  for (int i = 0; i < 25; ++i) c.push_back({{u(rng), u(rng)}, {u(rng), u(rng)}});
  const auto a = estimateTransform(c, {}), b = estimateTransform(c, {});
  EXPECT_EQ(a.homography.rowMajor(), b.homography.rowMajor());
  EXPECT_EQ(a.inlierCount, b.inlierCount);
}

TEST(RegisterPair, IdenticalMapsGiveNearIdentity) {
  const auto v = bagVesselness(synth::generateSubject(maculaOnly(1), 6))[0];
  const auto o = registerPair(v, v);
  EXPECT_TRUE(o.valid);
  EXPECT_LE(o.homography.maxAbsDiff(Homography::identity()), 1e-6);
}

TEST(RegisterPair, IntegerShift) {
  const auto v = bagVesselness(synth::generateSubject(maculaOnly(1), 7))[0];
  const auto moved = geometry::warp(v, Homography::translation(20, 0), 512, 512);
  const auto o = registerPair(v, moved);
  EXPECT_TRUE(o.valid);
  EXPECT_NEAR(o.decomposition.tx, 20.0, 0.5);
  EXPECT_NEAR(o.decomposition.ty, 0.0, 0.5);
}

TEST(RegisterPair, NoiseIsNotRegistered) {
  const auto v = bagVesselness(synth::generateSubject(maculaOnly(1), 8))[0];
  const auto n = noiseMap(512, 9);
  bool failed = false;
  try {
    failed = !registerPair(n, v).valid;
  } catch (const RegistrationError&) {
    failed = true;
  }
  EXPECT_TRUE(failed);
}

TEST(SelectNextAnchor, NearestToDominantCentroid) {
  std::vector<Point2> t{{0, 0}, {1, 1}, {50, 50}};
  EXPECT_EQ(selectNextAnchor(t, {}), 0u);
  EXPECT_EQ(selectNextAnchor(t, {0}), 1u);
}

TEST(SelectNextAnchor, SingleAndExhausted) {
  std::vector<Point2> one{{3, 4}};
  EXPECT_EQ(selectNextAnchor(one, {}), 0u);
  EXPECT_THROW(selectNextAnchor(one, {0}), ExhaustedAnchorsError);
  EXPECT_THROW(selectNextAnchor({}, {}), ExhaustedAnchorsError);
}

TEST(RegisterBag, FiveSyntheticViews) {
  const auto s = synth::generateSubject(maculaOnly(5), 21);
  const auto r = registerBag(bagVesselness(s));
  ASSERT_TRUE(r.success);
  EXPECT_EQ(r.outcomes.size(), 4u);
  for (const auto& o : r.outcomes) {
    EXPECT_NE(o.view, r.anchorIndex);
    EXPECT_TRUE(o.valid());
    const auto err = r.homographyFor(o.view) * geometry::invert(synth::expectedRegistration(s, o.view, r.anchorIndex));
    const auto d = geometry::decompose(err);
    EXPECT_NEAR(d.sx, 1.0, 0.02);
    EXPECT_NEAR(d.sy, 1.0, 0.02);
    EXPECT_LE(std::abs(d.theta), 1.0);
  }
  EXPECT_LE(r.trials.size(), 5u);
  EXPECT_EQ(r.trials.size(), r.usedAnchors.size());
}

TEST(RegisterBag, NoiseViewFailsBag) {
  const auto s = synth::generateSubject(maculaOnly(4), 22);
  auto maps = bagVesselness(s);
  maps[2] = noiseMap(512, 23);
  const auto r = registerBag(maps);
  EXPECT_FALSE(r.success);
  // every anchor tried once at most
  std::set<std::size_t> used(r.usedAnchors.begin(), r.usedAnchors.end());
  EXPECT_EQ(used.size(), r.usedAnchors.size());
  EXPECT_LE(r.usedAnchors.size(), maps.size());
}

TEST(RegisterBag, TwoIdenticalViews) {
  const auto v = bagVesselness(synth::generateSubject(maculaOnly(1), 24))[0];
  std::vector<VesselnessMap> maps{v, v};
  const auto r = registerBag(maps);
  ASSERT_TRUE(r.success);
  EXPECT_LE(r.homographyFor(1 - r.anchorIndex).maxAbsDiff(Homography::identity()), 1e-6);
}

TEST(RegisterBag, Preconditions) {
  std::vector<VesselnessMap> one{VesselnessMap(64, 64, 1)};
  EXPECT_THROW(registerBag(one), ArgumentError);
  std::vector<VesselnessMap> two(2, VesselnessMap(64, 64, 1));
  BagConfig cfg;
  cfg.initialAnchor = 2;
  EXPECT_THROW(registerBag(two, cfg), ArgumentError);
}
