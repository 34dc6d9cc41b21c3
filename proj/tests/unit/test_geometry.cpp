#include <gtest/gtest.h>

#include <numbers>
#include <random>

#include "grinadapt/geometry.hpp"
#include "grinadapt/kmeans.hpp"

using namespace grinadapt;
using namespace grinadapt::geometry;

namespace {

std::array<double, 9> matmul(const std::array<double, 9>& a, const std::array<double, 9>& b) {
  std::array<double, 9> r{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) r[i * 3 + j] += a[i * 3 + k] * b[k * 3 + j];
  return r;
}

ProbabilityMap gaussianBlob(std::size_t n, double cx, double cy, double sigma) {
  ProbabilityMap m(n, n, 2);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const double v = std::exp(-((x - cx) * (x - cx) + (y - cy) * (y - cy)) / (2 * sigma * sigma));
      m(y, x, 0) = v;
      m(y, x, 1) = 1.0 - v;
    }
  return m;
}

}  // namespace

TEST(Homography, NormalizesByBottomRight) {
  Homography h({2, 0, 4, 0, 2, 6, 0, 0, 2});
  EXPECT_EQ(h(2, 2), 1.0);
  EXPECT_EQ(h(0, 2), 2.0);
  EXPECT_EQ(h(1, 1), 1.0);
}

TEST(Homography, RejectsZeroCornerAndSingular) {
  EXPECT_THROW(Homography({1, 0, 0, 0, 1, 0, 0, 0, 0}), SingularTransformError);
  EXPECT_THROW(Homography({1, 2, 0, 2, 4, 0, 0, 0, 1}), SingularTransformError);
}

TEST(Homography, CompositionAppliesRightOperandFirst) {
  const auto t = Homography::translation(3, 0);
  const auto s = Homography::similarity(2.0, 0.0);
  const auto p = (t * s).apply({1, 1});
  ASSERT_TRUE(p);
  EXPECT_DOUBLE_EQ(p->x, 5.0);
  EXPECT_DOUBLE_EQ(p->y, 2.0);
}

TEST(Decompose, Identity) {
  const auto d = decompose(Homography::identity());
  EXPECT_EQ(d.tx, 0.0);
  EXPECT_EQ(d.ty, 0.0);
  EXPECT_EQ(d.sx, 1.0);
  EXPECT_EQ(d.sy, 1.0);
  EXPECT_EQ(d.theta, 0.0);
  EXPECT_EQ(d.shear, 0.0);
  EXPECT_EQ(d.perspective, 0.0);
}

TEST(Decompose, PureTranslation) {
  const auto d = decompose(Homography::translation(5, -3));
  EXPECT_EQ(d.tx, 5.0);
  EXPECT_EQ(d.ty, -3.0);
  EXPECT_EQ(d.sx, 1.0);
  EXPECT_EQ(d.sy, 1.0);
  EXPECT_EQ(d.theta, 0.0);
}

TEST(Decompose, RotationThenScaleFromExplicitMatrices) {
  const double r = 10.0 * std::numbers::pi / 180.0;
  const std::array<double, 9> rot{std::cos(r), -std::sin(r), 0, std::sin(r), std::cos(r), 0, 0, 0, 1};
  const std::array<double, 9> scale{1.2, 0, 0, 0, 1.2, 0, 0, 0, 1};
  const auto d = decompose(Homography(matmul(scale, rot)));
  EXPECT_NEAR(d.sx, 1.2, 1e-9);
  EXPECT_NEAR(d.sy, 1.2, 1e-9);
  EXPECT_NEAR(d.theta, 10.0, 1e-9);
  EXPECT_NEAR(d.shear, 0.0, 1e-12);
}

TEST(Decompose, PerspectiveMagnitude) {
  const auto d = decompose(Homography({1, 0, 0, 0, 1, 0, 0.003, 0.004, 1}));
  EXPECT_NEAR(d.perspective, 0.005, 1e-15);
}

TEST(Decompose, ShearFromColumnCosine) {
  const auto d = decompose(Homography::affine(1, 0.5, 0, 0, 1, 0));
  // columns (1,0) and (0.5,1): cos = 0.5 / sqrt(1.25)
  EXPECT_NEAR(d.shear, 0.5 / std::sqrt(1.25), 1e-15);
  EXPECT_NEAR(d.sy, std::sqrt(1.25), 1e-15);
}

TEST(Decompose, RoundTripRandomAffines) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 500; ++i) {
    const auto h = Homography::affine(1 + 0.4 * u(rng), 0.3 * u(rng), 40 * u(rng), 0.3 * u(rng), 1 + 0.4 * u(rng),
                                      40 * u(rng));
    const auto back = recompose(decompose(h));
    EXPECT_LE(back.maxAbsDiff(h), 1e-9);
  }
}

TEST(Decompose, RoundTripKeepsReflections) {
  const auto h = Homography::affine(-1.1, 0.2, 3, 0.1, 0.9, -4);
  EXPECT_EQ(decompose(h).orientation, -1);
  EXPECT_LE(recompose(decompose(h)).maxAbsDiff(h), 1e-12);
}

TEST(Validate, DefaultsAcceptIdentity) {
  EXPECT_TRUE(validate(decompose(Homography::identity()), {}).valid);
}

TEST(Validate, DefaultThresholdValues) {
  const ValidationThresholds t;
  EXPECT_EQ(t.scaleMin, 0.5);
  EXPECT_EQ(t.scaleMax, 2.0);
  EXPECT_EQ(t.rotMaxDeg, 15.0);
  EXPECT_EQ(t.shearMax, 0.5);
  EXPECT_EQ(t.perspMax, 0.01);
  EXPECT_FALSE(t.translationMax.has_value());
}

TEST(Validate, ScaleAboveTwoIsRejected) {
  DecomposedTransform d;
  d.sx = 2.5;
  const auto r = validate(d, {});
  EXPECT_FALSE(r.valid);
  ASSERT_EQ(r.violations.size(), 1u);
  EXPECT_TRUE(r.violates(Component::ScaleX));
}

TEST(Validate, RotationAboveFifteenDegreesIsRejected) {
  DecomposedTransform d;
  d.theta = 20.0;
  const auto r = validate(d, {});
  EXPECT_FALSE(r.valid);
  ASSERT_EQ(r.violations.size(), 1u);
  EXPECT_TRUE(r.violates(Component::Rotation));
}

TEST(Validate, EachComponentFlaggedIndividually) {
  ValidationThresholds t;
  t.translationMax = 50.0;
  struct Case {
    DecomposedTransform d;
    Component c;
  };
  std::vector<Case> cases(7);
  cases[0].d.sx = 0.4, cases[0].c = Component::ScaleX;
  cases[1].d.sy = 2.1, cases[1].c = Component::ScaleY;
  cases[2].d.theta = -15.5, cases[2].c = Component::Rotation;
  cases[3].d.shear = -0.6, cases[3].c = Component::Shear;
  cases[4].d.perspective = 0.02, cases[4].c = Component::Perspective;
  cases[5].d.tx = -51, cases[5].c = Component::TranslationX;
  cases[6].d.ty = 51, cases[6].c = Component::TranslationY;
  for (const auto& k : cases) {
    const auto r = validate(k.d, t);
    EXPECT_FALSE(r.valid);
    ASSERT_EQ(r.violations.size(), 1u);
    EXPECT_EQ(r.violations[0], k.c);
  }
}

TEST(Validate, BoundsAreInclusive) {
  DecomposedTransform d;
  d.sx = 2.0;
  d.sy = 0.5;
  d.theta = 15.0;
  d.shear = 0.5;
  d.perspective = 0.01;
  EXPECT_TRUE(validate(d, {}).valid);
}

TEST(Validate, MonotoneUnderLooserThresholds) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  ValidationThresholds loose{0.3, 3.0, 25.0, 0.8, 0.05, std::nullopt};
  for (int i = 0; i < 1000; ++i) {
    DecomposedTransform d;
    d.sx = 1 + u(rng);
    d.sy = 1 + u(rng);
    d.theta = 20 * u(rng);
    d.shear = 0.6 * u(rng);
    d.perspective = 0.015 * std::abs(u(rng));
    if (validate(d, {}).valid) EXPECT_TRUE(validate(d, loose).valid);
  }
}

TEST(Validate, ThresholdCheck) {
  EXPECT_THROW((ValidationThresholds{2.0, 1.0}.check()), ArgumentError);
  EXPECT_THROW((ValidationThresholds{0.5, 2.0, 0.0}.check()), ArgumentError);
  EXPECT_NO_THROW(ValidationThresholds{}.check());
}

TEST(Decompose, DegenerateColumnThrows) {
  // Normalized constructor rejects singular matrices, so build through a near-zero column.
  EXPECT_THROW(decompose(Homography({1e-13, 0, 0, 0, 1e13, 0, 0, 0, 1})), SingularTransformError);
}

TEST(Invert, IdentityAndTranslation) {
  EXPECT_EQ(invert(Homography::identity()).maxAbsDiff(Homography::identity()), 0.0);
  EXPECT_EQ(invert(Homography::translation(5, -3)).maxAbsDiff(Homography::translation(-5, 3)), 0.0);
}

TEST(Invert, RandomAffineProductIsIdentity) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    const auto h = Homography({1 + 0.3 * u(rng), 0.2 * u(rng), 30 * u(rng), 0.2 * u(rng), 1 + 0.3 * u(rng),
                               30 * u(rng), 0.001 * u(rng), 0.001 * u(rng), 1});
    EXPECT_LE((invert(h) * h).maxAbsDiff(Homography::identity()), 1e-9);
    EXPECT_LE(invert(invert(h)).maxAbsDiff(h), 1e-9);
  }
}

TEST(Warp, IdentityIsExact) {
  const auto m = gaussianBlob(24, 10, 12, 4);
  EXPECT_EQ(warp(m, Homography::identity(), 24, 24), m);
}

TEST(Warp, IntegerTranslationMovesDelta) {
  ProbabilityMap m(16, 16, 1);
  m(8, 4, 0) = 1.0;
  const auto w = warp(m, Homography::translation(5, 0), 16, 16);
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x = 0; x < 16; ++x) EXPECT_EQ(w(y, x, 0), (y == 8 && x == 9) ? 1.0 : 0.0);
}

TEST(Warp, OffMapContentIsZero) {
  ProbabilityMap m(8, 8, 1, 1.0);
  const auto w = warp(m, Homography::translation(5, 0), 8, 8);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 4; ++x) EXPECT_EQ(w(y, x, 0), 0.0);
  EXPECT_EQ(w(3, 6, 0), 1.0);
}

TEST(Warp, ForwardThenInverseOnSmoothMap) {
  const auto m = gaussianBlob(96, 48, 44, 9);
  const auto h = Homography::translation(48, 48) * Homography::similarity(1.05, 6.0) *
                 Homography::translation(-48, -48) * Homography::translation(2.3, -1.7);
  const auto back = warp(warp(m, h, 96, 96), invert(h), 96, 96);
  double err = 0.0;
  for (std::size_t y = 16; y < 80; ++y)
    for (std::size_t x = 16; x < 80; ++x)
      for (std::size_t c = 0; c < 2; ++c) err = std::max(err, std::abs(back(y, x, c) - m(y, x, c)));
  EXPECT_LE(err, 0.02);
}

TEST(Warp, PreservesRangeAndSumBound) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ProbabilityMap m(20, 20, 3);
  for (std::size_t i = 0; i < m.pixelCount(); ++i) {
    auto p = m.pixel(i);
    const double a = u(rng), b = u(rng) * (1 - a);
    p[0] = a, p[1] = b, p[2] = 1 - a - b;
  }
  const auto w = warp(m, Homography::similarity(0.9, 7, 1.3, 2.1), 20, 20);
  for (std::size_t i = 0; i < w.pixelCount(); ++i) {
    double s = 0.0;
    for (double v : w.pixel(i)) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0 + 1e-12);
      s += v;
    }
    EXPECT_LE(s, 1.0 + 1e-6);
  }
  EXPECT_EQ(w.channels(), 3u);
}

TEST(Warp, RejectsNonPositiveDims) {
  ProbabilityMap m(4, 4, 1);
  EXPECT_THROW(warp(m, Homography::identity(), 0, 4), ArgumentError);
  EXPECT_THROW(warp(m, Homography::identity(), 4, -1), ArgumentError);
}

TEST(KMeans, EffectiveClusterCount) {
  EXPECT_EQ(effectiveClusterCount(2, 1), 1u);
  EXPECT_EQ(effectiveClusterCount(2, 2), 1u);
  EXPECT_EQ(effectiveClusterCount(2, 3), 2u);
  EXPECT_EQ(effectiveClusterCount(5, 3), 3u);
}

TEST(KMeans, SeparatesTwoGroupsAndPicksLarger) {
  std::vector<Point2> pts{{0, 0}, {1, 0}, {0, 1}, {40, 40}, {41, 40}};
  const auto r = kmeans(pts, {});
  ASSERT_EQ(r.centers.size(), 2u);
  EXPECT_EQ(r.counts[r.dominant], 3u);
  EXPECT_NEAR(r.centers[r.dominant].x, 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(r.centers[r.dominant].y, 1.0 / 3.0, 1e-12);
}

TEST(KMeans, DeterministicUnderSeed) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 100);
  std::vector<Point2> pts;
  for (int i = 0; i < 50; ++i) pts.push_back({u(rng), u(rng)});
  const auto a = kmeans(pts, {3, 20, 9}), b = kmeans(pts, {3, 20, 9});
  EXPECT_EQ(a.assignment, b.assignment);
}
