#pragma once

// Shared value types: class layout, scan kinds, pixel grids and label maps.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace grinadapt {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

class LayoutError : public Error {
 public:
  using Error::Error;
};

class SingularTransformError : public Error {
 public:
  using Error::Error;
};

class PolicyError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class AdaptationError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// CAVF class layout
// ---------------------------------------------------------------------------

enum class CavfClass : std::uint8_t {
  Background = 0,
  Capillary = 1,
  Artery = 2,
  Vein = 3,
  Faz = 4,
};

inline constexpr std::size_t kNumClasses = 5;

constexpr std::uint8_t classId(CavfClass c) { return static_cast<std::uint8_t>(c); }

inline std::string_view className(std::size_t id) {
  static constexpr std::string_view names[kNumClasses] = {"BG", "C", "A", "V", "F"};
  return id < kNumClasses ? names[id] : std::string_view{"?"};
}

enum class ScanKind { Macula6, Macula12, Disc6, Auxiliary };

inline std::string_view toString(ScanKind k) {
  switch (k) {
    case ScanKind::Macula6: return "macula6";
    case ScanKind::Macula12: return "macula12";
    case ScanKind::Disc6: return "disc6";
    case ScanKind::Auxiliary: return "auxiliary";
  }
  return "unknown";
}

inline ScanKind parseScanKind(std::string_view s) {
  if (s == "macula6") return ScanKind::Macula6;
  if (s == "macula12") return ScanKind::Macula12;
  if (s == "disc6") return ScanKind::Disc6;
  if (s == "auxiliary") return ScanKind::Auxiliary;
  throw ArgumentError("unknown scan kind: " + std::string(s));
}

// ---------------------------------------------------------------------------
// Pixel grids
// ---------------------------------------------------------------------------

struct ProbabilityTag {};
struct IntensityTag {};
struct VesselnessTag {};

/// Dense H x W x C grid of reals, channels contiguous per pixel (row-major HWC).
/// The tag keeps class-probability maps, input images and vesselness maps
/// from being mixed up while sharing all of the resampling machinery.
template <class Tag>
class PixelGrid {
 public:
  PixelGrid() = default;
  PixelGrid(std::size_t height, std::size_t width, std::size_t channels, double fill = 0.0)
      : height_(height), width_(width), channels_(channels),
        data_(height * width * channels, fill) {}

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t channels() const { return channels_; }
  std::size_t pixelCount() const { return height_ * width_; }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t y, std::size_t x, std::size_t c) {
    return data_[(y * width_ + x) * channels_ + c];
  }
  double operator()(std::size_t y, std::size_t x, std::size_t c) const {
    return data_[(y * width_ + x) * channels_ + c];
  }

  std::span<double> pixel(std::size_t y, std::size_t x) {
    return {data_.data() + (y * width_ + x) * channels_, channels_};
  }
  std::span<const double> pixel(std::size_t y, std::size_t x) const {
    return {data_.data() + (y * width_ + x) * channels_, channels_};
  }
  std::span<double> pixel(std::size_t index) { return {data_.data() + index * channels_, channels_}; }
  std::span<const double> pixel(std::size_t index) const {
    return {data_.data() + index * channels_, channels_};
  }

  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  bool sameShape(const PixelGrid& o) const {
    return height_ == o.height_ && width_ == o.width_ && channels_ == o.channels_;
  }

  /// Every value in [0,1] and, when `normalized`, every channel sum within tol of 1.
  bool isValidProbability(bool normalized, double tol = 1e-6) const {
    for (std::size_t i = 0; i < pixelCount(); ++i) {
      double s = 0.0;
      for (double v : pixel(i)) {
        if (!(v >= 0.0 && v <= 1.0)) return false;
        s += v;
      }
      if (normalized && std::abs(s - 1.0) > tol) return false;
    }
    return true;
  }

  friend bool operator==(const PixelGrid&, const PixelGrid&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t channels_ = 0;
  std::vector<double> data_;
};

using ProbabilityMap = PixelGrid<ProbabilityTag>;
using InputImage = PixelGrid<IntensityTag>;
using VesselnessMap = PixelGrid<VesselnessTag>;

/// Per-pixel hard class ids.
class LabelMap {
 public:
  LabelMap() = default;
  LabelMap(std::size_t height, std::size_t width, std::uint8_t fill = 0)
      : height_(height), width_(width), data_(height * width, fill) {}

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t pixelCount() const { return data_.size(); }

  std::uint8_t& operator()(std::size_t y, std::size_t x) { return data_[y * width_ + x]; }
  std::uint8_t operator()(std::size_t y, std::size_t x) const { return data_[y * width_ + x]; }
  std::uint8_t& operator[](std::size_t i) { return data_[i]; }
  std::uint8_t operator[](std::size_t i) const { return data_[i]; }

  std::vector<std::uint8_t>& values() { return data_; }
  const std::vector<std::uint8_t>& values() const { return data_; }

  std::size_t count(std::uint8_t cls) const {
    std::size_t n = 0;
    for (auto v : data_) n += (v == cls);
    return n;
  }

  friend bool operator==(const LabelMap&, const LabelMap&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<std::uint8_t> data_;
};

/// Index of the largest value; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

inline LabelMap argmaxLabels(const ProbabilityMap& map) {
  LabelMap out(map.height(), map.width());
  for (std::size_t i = 0; i < map.pixelCount(); ++i)
    out[i] = static_cast<std::uint8_t>(argmax(map.pixel(i)));
  return out;
}

/// One-hot probability map of a label map.
inline ProbabilityMap oneHot(const LabelMap& labels, std::size_t channels = kNumClasses) {
  ProbabilityMap out(labels.height(), labels.width(), channels);
  for (std::size_t i = 0; i < labels.pixelCount(); ++i) {
    if (labels[i] >= channels) throw LayoutError("label id out of range for one-hot encoding");
    out.pixel(i)[labels[i]] = 1.0;
  }
  return out;
}

inline void requireCavf(const ProbabilityMap& map, std::string_view what) {
  if (map.channels() != kNumClasses)
    throw LayoutError(std::string(what) + ": expected 5 CAVF channels, got " +
                      std::to_string(map.channels()));
}

}  // namespace grinadapt
