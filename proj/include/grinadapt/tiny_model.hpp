#pragma once

// Per-pixel linear-softmax classifier over a k x k neighbourhood of the input
// channels. Small enough for exact analytic gradients.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "grinadapt/core.hpp"

namespace grinadapt {

class TinyModel {
 public:
  TinyModel() = default;
  TinyModel(std::size_t inputChannels, std::size_t kernel = 5, std::size_t classes = kNumClasses)
      : inputChannels_(inputChannels), kernel_(kernel), classes_(classes),
        params_(classes * (inputChannels * kernel * kernel + 1), 0.0) {
    if (kernel % 2 == 0) throw ArgumentError("TinyModel kernel must be odd");
  }

  /// Gaussian initialization with standard deviation `scale`.
  static TinyModel random(std::size_t inputChannels, std::size_t kernel, std::size_t classes, std::uint64_t seed,
                          double scale = 0.1) {
    TinyModel m(inputChannels, kernel, classes);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, scale);
    for (double& p : m.params_) p = n(rng);
    return m;
  }

  std::size_t inputChannels() const { return inputChannels_; }
  std::size_t kernel() const { return kernel_; }
  std::size_t classes() const { return classes_; }
  std::size_t weightsPerClass() const { return inputChannels_ * kernel_ * kernel_; }

  std::vector<double>& parameters() { return params_; }
  const std::vector<double>& parameters() const { return params_; }

  std::size_t weightIndex(std::size_t c, std::size_t ch, std::size_t ky, std::size_t kx) const {
    return ((c * inputChannels_ + ch) * kernel_ + ky) * kernel_ + kx;
  }
  std::size_t biasIndex(std::size_t c) const { return classes_ * weightsPerClass() + c; }

  /// Class logits, H x W x classes. Neighbours outside the image read as zero.
  PixelGrid<ProbabilityTag> logits(const InputImage& x) const {
    checkInput(x);
    const std::size_t H = x.height(), W = x.width();
    const long r = static_cast<long>(kernel_ / 2);
    PixelGrid<ProbabilityTag> z(H, W, classes_);
    for (std::size_t c = 0; c < classes_; ++c) {
      const double b = params_[biasIndex(c)];
      for (std::size_t i = 0; i < H * W; ++i) z.values()[i * classes_ + c] = b;
    }
    const auto& xv = x.values();
    auto& zv = z.values();
    const std::size_t cin = inputChannels_;
    for (std::size_t c = 0; c < classes_; ++c)
      for (std::size_t ch = 0; ch < cin; ++ch)
        for (long ky = -r; ky <= r; ++ky)
          for (long kx = -r; kx <= r; ++kx) {
            const double w = params_[weightIndex(c, ch, static_cast<std::size_t>(ky + r), static_cast<std::size_t>(kx + r))];
            if (w == 0.0) continue;
            const long y0 = std::max(0L, -ky), y1 = std::min<long>(H, static_cast<long>(H) - ky);
            const long x0 = std::max(0L, -kx), x1 = std::min<long>(W, static_cast<long>(W) - kx);
            for (long y = y0; y < y1; ++y) {
              const double* src = &xv[((y + ky) * W + (x0 + kx)) * cin + ch];
              double* dst = &zv[(y * W + x0) * classes_ + c];
              for (long xx = x0; xx < x1; ++xx, src += cin, dst += classes_) *dst += w * *src;
            }
          }
    return z;
  }

  ProbabilityMap forward(const InputImage& x) const { return softmax(logits(x)); }

  static ProbabilityMap softmax(const PixelGrid<ProbabilityTag>& z) {
    ProbabilityMap p(z.height(), z.width(), z.channels());
    for (std::size_t i = 0; i < z.pixelCount(); ++i) {
      auto zi = z.pixel(i);
      auto pi = p.pixel(i);
      double m = zi[0];
      for (double v : zi) m = std::max(m, v);
      double s = 0.0;
      for (std::size_t c = 0; c < zi.size(); ++c) s += pi[c] = std::exp(zi[c] - m);
      for (double& v : pi) v /= s;
    }
    return p;
  }

  /// Parameter gradient given dLoss/dlogits (H x W x classes).
  std::vector<double> backward(const InputImage& x, const PixelGrid<ProbabilityTag>& dLogits) const {
    checkInput(x);
    std::vector<double> g(params_.size(), 0.0);
    const std::size_t H = x.height(), W = x.width(), cin = inputChannels_;
    const long r = static_cast<long>(kernel_ / 2);
    const auto& xv = x.values();
    const auto& dz = dLogits.values();
    for (std::size_t c = 0; c < classes_; ++c) {
      double b = 0.0;
      for (std::size_t i = 0; i < H * W; ++i) b += dz[i * classes_ + c];
      g[biasIndex(c)] = b;
      for (std::size_t ch = 0; ch < cin; ++ch)
        for (long ky = -r; ky <= r; ++ky)
          for (long kx = -r; kx <= r; ++kx) {
            const long y0 = std::max(0L, -ky), y1 = std::min<long>(H, static_cast<long>(H) - ky);
            const long x0 = std::max(0L, -kx), x1 = std::min<long>(W, static_cast<long>(W) - kx);
            double s = 0.0;
            for (long y = y0; y < y1; ++y) {
              const double* src = &xv[((y + ky) * W + (x0 + kx)) * cin + ch];
              const double* d = &dz[(y * W + x0) * classes_ + c];
              for (long xx = x0; xx < x1; ++xx, src += cin, d += classes_) s += *d * *src;
            }
            g[weightIndex(c, ch, static_cast<std::size_t>(ky + r), static_cast<std::size_t>(kx + r))] = s;
          }
    }
    return g;
  }

  friend bool operator==(const TinyModel&, const TinyModel&) = default;

 private:
  void checkInput(const InputImage& x) const {
    if (x.channels() != inputChannels_)
      throw LayoutError("model expects " + std::to_string(inputChannels_) + " input channels, got " +
                        std::to_string(x.channels()));
  }

  std::size_t inputChannels_ = 0;
  std::size_t kernel_ = 5;
  std::size_t classes_ = kNumClasses;
  std::vector<double> params_;
};

}  // namespace grinadapt
