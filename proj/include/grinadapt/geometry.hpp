#pragma once

// Planar homographies: decomposition into translation/scale/rotation/shear/
// perspective, plausibility validation, inversion and map warping.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "grinadapt/core.hpp"

namespace grinadapt::geometry {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

inline constexpr double kSingularEps = 1e-12;

/// 3x3 row-major planar transform, kept normalized so that m[8] == 1.
class Homography {
 public:
  Homography() : m_{1, 0, 0, 0, 1, 0, 0, 0, 1} {}

  /// Normalizes by the bottom-right entry; rejects singular matrices.
  explicit Homography(const std::array<double, 9>& rowMajor) : m_(rowMajor) { normalize(); }

  static Homography identity() { return {}; }
  static Homography translation(double tx, double ty) {
    return Homography({1, 0, tx, 0, 1, ty, 0, 0, 1});
  }
  static Homography affine(double a11, double a12, double tx, double a21, double a22, double ty) {
    return Homography({a11, a12, tx, a21, a22, ty, 0, 0, 1});
  }
  /// Rotation by `degrees` and isotropic `scale` about the origin.
  static Homography similarity(double scale, double degrees, double tx = 0.0, double ty = 0.0) {
    const double r = degrees * std::numbers::pi / 180.0;
    const double c = scale * std::cos(r), s = scale * std::sin(r);
    return affine(c, -s, tx, s, c, ty);
  }

  double operator()(std::size_t row, std::size_t col) const { return m_[row * 3 + col]; }
  const std::array<double, 9>& rowMajor() const { return m_; }

  double determinant() const {
    return m_[0] * (m_[4] * m_[8] - m_[5] * m_[7]) - m_[1] * (m_[3] * m_[8] - m_[5] * m_[6]) +
           m_[2] * (m_[3] * m_[7] - m_[4] * m_[6]);
  }

  bool isAffine() const { return m_[6] == 0.0 && m_[7] == 0.0; }

  /// Maps a point; empty when it lands on or behind the line at infinity.
  std::optional<Point2> apply(Point2 p) const {
    const double w = m_[6] * p.x + m_[7] * p.y + m_[8];
    if (w <= kSingularEps) return std::nullopt;
    return Point2{(m_[0] * p.x + m_[1] * p.y + m_[2]) / w, (m_[3] * p.x + m_[4] * p.y + m_[5]) / w};
  }

  /// this * rhs: apply rhs first.
  friend Homography operator*(const Homography& a, const Homography& b) {
    std::array<double, 9> r{};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        for (int k = 0; k < 3; ++k) r[i * 3 + j] += a.m_[i * 3 + k] * b.m_[k * 3 + j];
    return Homography(r);
  }

  double maxAbsDiff(const Homography& o) const {
    double d = 0.0;
    for (int i = 0; i < 9; ++i) d = std::max(d, std::abs(m_[i] - o.m_[i]));
    return d;
  }

 private:
  void normalize() {
    if (std::abs(m_[8]) <= kSingularEps)
      throw SingularTransformError("homography has h33 ~ 0 and cannot be normalized");
    const double s = m_[8];
    for (double& v : m_) v /= s;
    m_[8] = 1.0;
    if (std::abs(determinant()) <= kSingularEps)
      throw SingularTransformError("homography is singular");
  }

  std::array<double, 9> m_;
};

struct DecomposedTransform {
  double tx = 0.0;
  double ty = 0.0;
  double sx = 1.0;
  double sy = 1.0;
  double theta = 0.0;  // degrees
  double shear = 0.0;
  double perspective = 0.0;
  // Sign of det(A); needed to recompose reflections, not part of validation.
  int orientation = 1;
};

inline DecomposedTransform decompose(const Homography& h) {
  const double a11 = h(0, 0), a12 = h(0, 1), a21 = h(1, 0), a22 = h(1, 1);
  DecomposedTransform d;
  d.tx = h(0, 2);
  d.ty = h(1, 2);
  d.sx = std::hypot(a11, a21);
  d.sy = std::hypot(a12, a22);
  if (d.sx < kSingularEps || d.sy < kSingularEps)
    throw SingularTransformError("degenerate linear part: zero-norm column");
  const double r11 = a11 / d.sx, r21 = a21 / d.sx;
  d.theta = std::atan2(r21, r11) * 180.0 / std::numbers::pi;
  d.shear = (a11 * a12 + a21 * a22) / (d.sx * d.sy);
  d.perspective = std::hypot(h(2, 0), h(2, 1));
  d.orientation = (a11 * a22 - a12 * a21) < 0.0 ? -1 : 1;
  return d;
}

/// Inverse of decompose() for the affine part; perspective is dropped.
inline Homography recompose(const DecomposedTransform& d) {
  const double t = d.theta * std::numbers::pi / 180.0;
  const double ux = std::cos(t), uy = std::sin(t);
  // Second column: unit vector at cos(angle) = shear from the first, on the side given by orientation.
  const double ortho = d.orientation * std::sqrt(std::max(0.0, 1.0 - d.shear * d.shear));
  const double vx = d.shear * ux - ortho * uy;
  const double vy = d.shear * uy + ortho * ux;
  return Homography::affine(d.sx * ux, d.sy * vx, d.tx, d.sx * uy, d.sy * vy, d.ty);
}

struct ValidationThresholds {
  double scaleMin = 0.5;
  double scaleMax = 2.0;
  double rotMaxDeg = 15.0;
  double shearMax = 0.5;
  double perspMax = 0.01;
  std::optional<double> translationMax;  // unrestricted when empty

  void check() const {
    if (!(scaleMin > 0.0 && scaleMin < scaleMax)) throw ArgumentError("need 0 < scaleMin < scaleMax");
    if (!(rotMaxDeg > 0.0)) throw ArgumentError("rotMaxDeg must be positive");
    if (!(shearMax > 0.0)) throw ArgumentError("shearMax must be positive");
    if (!(perspMax > 0.0)) throw ArgumentError("perspMax must be positive");
    if (translationMax && !(*translationMax >= 0.0))
      throw ArgumentError("translationMax must be non-negative");
  }
};

enum class Component { ScaleX, ScaleY, Rotation, Shear, Perspective, TranslationX, TranslationY };

inline std::string_view toString(Component c) {
  switch (c) {
    case Component::ScaleX: return "scale_x";
    case Component::ScaleY: return "scale_y";
    case Component::Rotation: return "rotation";
    case Component::Shear: return "shear";
    case Component::Perspective: return "perspective";
    case Component::TranslationX: return "translation_x";
    case Component::TranslationY: return "translation_y";
  }
  return "unknown";
}

struct ValidationResult {
  bool valid = true;
  std::vector<Component> violations;

  bool violates(Component c) const {
    return std::find(violations.begin(), violations.end(), c) != violations.end();
  }
};

inline ValidationResult validate(const DecomposedTransform& d, const ValidationThresholds& t) {
  ValidationResult r;
  auto flag = [&](bool ok, Component c) {
    if (!ok) r.violations.push_back(c);
  };
  flag(d.sx >= t.scaleMin && d.sx <= t.scaleMax, Component::ScaleX);
  flag(d.sy >= t.scaleMin && d.sy <= t.scaleMax, Component::ScaleY);
  flag(std::abs(d.theta) <= t.rotMaxDeg, Component::Rotation);
  flag(std::abs(d.shear) <= t.shearMax, Component::Shear);
  flag(d.perspective <= t.perspMax, Component::Perspective);
  if (t.translationMax) {
    flag(std::abs(d.tx) <= *t.translationMax, Component::TranslationX);
    flag(std::abs(d.ty) <= *t.translationMax, Component::TranslationY);
  }
  r.valid = r.violations.empty();
  return r;
}

inline Homography invert(const Homography& h) {
  const auto& m = h.rowMajor();
  const double det = h.determinant();
  if (std::abs(det) <= kSingularEps) throw SingularTransformError("cannot invert singular homography");
  std::array<double, 9> inv = {
      (m[4] * m[8] - m[5] * m[7]), -(m[1] * m[8] - m[2] * m[7]), (m[1] * m[5] - m[2] * m[4]),
      -(m[3] * m[8] - m[5] * m[6]), (m[0] * m[8] - m[2] * m[6]), -(m[0] * m[5] - m[2] * m[3]),
      (m[3] * m[7] - m[4] * m[6]), -(m[0] * m[7] - m[1] * m[6]), (m[0] * m[4] - m[1] * m[3])};
  for (double& v : inv) v /= det;
  return Homography(inv);
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

/// Bilinear sample at (x, y) in pixel-center coordinates; taps outside the grid read as zero.
template <class Tag>
void sampleBilinear(const PixelGrid<Tag>& src, double x, double y, std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  const double fx0 = std::floor(x), fy0 = std::floor(y);
  const double H = static_cast<double>(src.height()), W = static_cast<double>(src.width());
  if (fx0 < -1.0 || fy0 < -1.0 || fx0 >= W || fy0 >= H) return;
  const auto x0 = static_cast<long>(fx0), y0 = static_cast<long>(fy0);
  const double ax = x - fx0, ay = y - fy0;
  const double w[4] = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay};
  const long xs[4] = {x0, x0 + 1, x0, x0 + 1};
  const long ys[4] = {y0, y0, y0 + 1, y0 + 1};
  const long h = static_cast<long>(src.height()), wd = static_cast<long>(src.width());
  for (int k = 0; k < 4; ++k) {
    if (w[k] == 0.0 || xs[k] < 0 || ys[k] < 0 || xs[k] >= wd || ys[k] >= h) continue;
    auto px = src.pixel(static_cast<std::size_t>(ys[k]), static_cast<std::size_t>(xs[k]));
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += w[k] * px[c];
  }
}

/// Pushes `map` forward through `h`: out(p) = map(h^-1(p)), bilinear, zero outside the source.
template <class Tag>
PixelGrid<Tag> warp(const PixelGrid<Tag>& map, const Homography& h, long outH, long outW) {
  if (outH <= 0 || outW <= 0) throw ArgumentError("warp output dimensions must be positive");
  const Homography back = invert(h);
  PixelGrid<Tag> out(static_cast<std::size_t>(outH), static_cast<std::size_t>(outW), map.channels());
  for (std::size_t y = 0; y < out.height(); ++y) {
    for (std::size_t x = 0; x < out.width(); ++x) {
      auto src = back.apply({static_cast<double>(x), static_cast<double>(y)});
      if (!src) continue;
      sampleBilinear(map, src->x, src->y, out.pixel(y, x));
    }
  }
  return out;
}

}  // namespace grinadapt::geometry
