#pragma once

// Teacher-student self-training against integrated labels: class-specific
// pseudo-labelling, Dice + cross-entropy losses with confidence masking,
// cosine schedules, EMA teacher and noise/contrast augmentation.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "grinadapt/core.hpp"
#include "grinadapt/metrics.hpp"
#include "grinadapt/tiny_model.hpp"

namespace grinadapt::adaptation {

using ClassWeights = std::array<double, kNumClasses>;

inline constexpr double kDiceEps = 1e-6;

// ---------------------------------------------------------------------------
// Pseudo-labels
// ---------------------------------------------------------------------------

struct FazBand {
  double upperFraction;  // of the half-diagonal d_c, exclusive
  double threshold;
};

struct ThresholdConfig {
  double tauArtery = 0.5;
  double tauVein = 0.5;
  double tauCapillary = 0.0;
  std::vector<FazBand> fazBands{{0.4, 0.2}, {0.5, 0.7}, {std::numeric_limits<double>::infinity(), 0.95}};
  double tauConf = 0.8;

  void check() const {
    auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!unit(tauArtery) || !unit(tauVein) || !unit(tauCapillary) || !unit(tauConf))
      throw ArgumentError("thresholds must lie in [0,1]");
    if (fazBands.empty()) throw ArgumentError("at least one FAZ band is required");
    for (std::size_t i = 0; i < fazBands.size(); ++i) {
      if (!unit(fazBands[i].threshold)) throw ArgumentError("FAZ band thresholds must lie in [0,1]");
      if (i > 0 && !(fazBands[i].upperFraction > fazBands[i - 1].upperFraction))
        throw ArgumentError("FAZ bands must be sorted by bound");
    }
  }
};

/// Distance-banded FAZ threshold; the distance is measured from (W/2, H/2) and scaled by
/// d_c = sqrt((H^2 + W^2) / 4).
inline double fazThresholdAt(double y, double x, std::size_t height, std::size_t width,
                             const ThresholdConfig& cfg = {}) {
  const double H = static_cast<double>(height), W = static_cast<double>(width);
  const double dc = std::sqrt((H * H + W * W) / 4.0);
  const double d = std::hypot(x - W / 2.0, y - H / 2.0);
  const double f = d / dc;
  for (const auto& b : cfg.fazBands)
    if (f < b.upperFraction) return b.threshold;
  return cfg.fazBands.back().threshold;
}

inline double classThreshold(std::size_t cls, std::size_t y, std::size_t x, std::size_t H, std::size_t W,
                             const ThresholdConfig& cfg) {
  switch (static_cast<CavfClass>(cls)) {
    case CavfClass::Background: return 0.0;
    case CavfClass::Capillary: return cfg.tauCapillary;
    case CavfClass::Artery: return cfg.tauArtery;
    case CavfClass::Vein: return cfg.tauVein;
    case CavfClass::Faz: return fazThresholdAt(double(y), double(x), H, W, cfg);
  }
  return 1.0;
}

/// Argmax class when it clears its threshold, background otherwise. Disc-centred
/// scans never carry FAZ.
inline LabelMap generatePseudoLabel(const ProbabilityMap& probs, ScanKind kind, const ThresholdConfig& cfg = {}) {
  requireCavf(probs, "generatePseudoLabel");
  LabelMap out(probs.height(), probs.width(), classId(CavfClass::Background));
  const std::size_t H = probs.height(), W = probs.width();
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      auto p = probs.pixel(y, x);
      const std::size_t c = argmax(p);
      if (c == classId(CavfClass::Faz) && kind == ScanKind::Disc6) continue;
      if (p[c] >= classThreshold(c, y, x, H, W, cfg)) out(y, x) = static_cast<std::uint8_t>(c);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Schedules and weights
// ---------------------------------------------------------------------------

struct ScheduleConfig {
  double lambdaMin = 0.1;
  double lambdaMax = 0.9;
  double epochs = 3.0;
  double emaAlpha = 0.995;
  double ceWeight = 1.0;
  // Teacher pseudo-label weights ramp min -> max, integrated-label weights max -> min.
  ClassWeights teacherMin{1, 1, 0.5, 0.5, 0.0};
  ClassWeights teacherMax{1, 1, 1.5, 1.5, 1.2};
  ClassWeights integratedMin{1, 1, 0.5, 0.5, 0.8};
  ClassWeights integratedMax{1, 1, 1.5, 1.5, 2.0};

  void check() const {
    if (!(lambdaMin < lambdaMax)) throw ArgumentError("lambdaMin must be below lambdaMax");
    if (!(emaAlpha > 0.0 && emaAlpha < 1.0)) throw ArgumentError("emaAlpha must lie in (0,1)");
    if (!(epochs > 0.0)) throw ArgumentError("epochs must be positive");
  }
};

/// Cosine ramp 0 -> 1 over [0, E]; t is clamped to the interval.
inline double cosineRamp(double t, double epochs) {
  const double u = std::clamp(t / epochs, 0.0, 1.0);
  return (1.0 - std::cos(std::numbers::pi * u)) / 2.0;
}

inline double lambdaSchedule(double t, const ScheduleConfig& cfg = {}) {
  const double eta = cosineRamp(t, cfg.epochs);
  return (1.0 - eta) * cfg.lambdaMin + eta * cfg.lambdaMax;
}

struct ScheduledWeights {
  ClassWeights teacher;
  ClassWeights integrated;
};

inline ScheduledWeights classWeightSchedule(double t, const ScheduleConfig& cfg = {}) {
  const double eta = cosineRamp(t, cfg.epochs);
  ScheduledWeights w;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    w.teacher[c] = (1.0 - eta) * cfg.teacherMin[c] + eta * cfg.teacherMax[c];
    w.integrated[c] = (1.0 - eta) * cfg.integratedMax[c] + eta * cfg.integratedMin[c];
  }
  return w;
}

/// N / (C_present * N_c) for present classes, zero for absent ones, rescaled to mean 1 over present classes.
inline ClassWeights pixelClassBalanceWeights(const LabelMap& label) {
  std::array<std::size_t, kNumClasses> n{};
  for (auto v : label.values()) {
    if (v >= kNumClasses) throw LayoutError("label id out of range");
    ++n[v];
  }
  ClassWeights w{};
  const double total = static_cast<double>(label.pixelCount());
  const auto present = static_cast<double>(std::count_if(n.begin(), n.end(), [](std::size_t k) { return k > 0; }));
  if (present == 0) return w;
  double mean = 0.0;
  for (std::size_t c = 0; c < kNumClasses; ++c)
    if (n[c] > 0) mean += w[c] = total / (present * static_cast<double>(n[c]));
  mean /= present;
  for (double& v : w) v /= mean;
  return w;
}

inline ClassWeights multiply(const ClassWeights& a, const ClassWeights& b) {
  ClassWeights r;
  for (std::size_t c = 0; c < kNumClasses; ++c) r[c] = a[c] * b[c];
  return r;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

namespace detail {

inline void checkLossInputs(const ProbabilityMap& probs, const LabelMap& label, std::span<const double> mask) {
  if (probs.height() != label.height() || probs.width() != label.width())
    throw ArgumentError("probabilities and label differ in shape");
  if (probs.channels() != kNumClasses) throw LayoutError("loss expects 5 class channels");
  if (!mask.empty() && mask.size() != label.pixelCount()) throw ArgumentError("mask size mismatch");
}

inline double maskAt(std::span<const double> mask, std::size_t i) { return mask.empty() ? 1.0 : mask[i]; }

/// Adds scale * dL/dlogits given dL/dp through the softmax Jacobian.
inline void softmaxBackward(const ProbabilityMap& p, const PixelGrid<ProbabilityTag>& dp, double scale,
                            PixelGrid<ProbabilityTag>& dz) {
  for (std::size_t i = 0; i < p.pixelCount(); ++i) {
    auto pi = p.pixel(i);
    auto gi = dp.pixel(i);
    double dot = 0.0;
    for (std::size_t c = 0; c < pi.size(); ++c) dot += pi[c] * gi[c];
    auto zi = dz.pixel(i);
    for (std::size_t c = 0; c < pi.size(); ++c) zi[c] += scale * pi[c] * (gi[c] - dot);
  }
}

}  // namespace detail

/// 1 - weighted mean over classes of (2 sum p y + eps) / (sum p + sum y + eps), sums over masked pixels.
/// When `dLogits` is given, scale * dDice/dlogits is accumulated into it.
inline double diceLoss(const ProbabilityMap& probs, const LabelMap& label, const ClassWeights& classWeights,
                       std::span<const double> mask = {}, PixelGrid<ProbabilityTag>* dLogits = nullptr,
                       double scale = 1.0) {
  detail::checkLossInputs(probs, label, mask);
  double wsum = 0.0;
  for (double w : classWeights) wsum += std::max(0.0, w);
  if (wsum <= 0.0) return 0.0;
  std::array<double, kNumClasses> inter{}, sum{};
  for (std::size_t i = 0; i < probs.pixelCount(); ++i) {
    const double m = detail::maskAt(mask, i);
    if (m == 0.0) continue;
    auto p = probs.pixel(i);
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      const double y = label[i] == c ? 1.0 : 0.0;
      inter[c] += m * p[c] * y;
      sum[c] += m * (p[c] + y);
    }
  }
  double score = 0.0;
  for (std::size_t c = 0; c < kNumClasses; ++c)
    if (classWeights[c] > 0.0) score += classWeights[c] / wsum * (2.0 * inter[c] + kDiceEps) / (sum[c] + kDiceEps);
  if (dLogits) {
    PixelGrid<ProbabilityTag> dp(probs.height(), probs.width(), kNumClasses);
    for (std::size_t i = 0; i < probs.pixelCount(); ++i) {
      const double m = detail::maskAt(mask, i);
      if (m == 0.0) continue;
      auto g = dp.pixel(i);
      for (std::size_t c = 0; c < kNumClasses; ++c) {
        if (classWeights[c] <= 0.0) continue;
        const double y = label[i] == c ? 1.0 : 0.0;
        const double den = sum[c] + kDiceEps;
        g[c] = -classWeights[c] / wsum * m * (2.0 * y * den - (2.0 * inter[c] + kDiceEps)) / (den * den);
      }
    }
    detail::softmaxBackward(probs, dp, scale, *dLogits);
  }
  return 1.0 - score;
}

/// sum_u m_u w_{y(u)} (-log p_{y(u)}) / sum_u w_{y(u)}; the denominator ignores the mask.
inline double ceLoss(const ProbabilityMap& probs, const LabelMap& label, std::span<const double> pixelWeights,
                     const ClassWeights& classWeights, PixelGrid<ProbabilityTag>* dLogits = nullptr,
                     double scale = 1.0) {
  detail::checkLossInputs(probs, label, pixelWeights);
  double den = 0.0;
  for (std::size_t i = 0; i < label.pixelCount(); ++i) den += classWeights[label[i]];
  if (den <= 0.0) return 0.0;
  double num = 0.0;
  for (std::size_t i = 0; i < probs.pixelCount(); ++i) {
    const double m = detail::maskAt(pixelWeights, i);
    const double w = classWeights[label[i]];
    if (m == 0.0 || w == 0.0) continue;
    auto p = probs.pixel(i);
    num += m * w * -std::log(std::max(p[label[i]], 1e-300));
    if (dLogits) {
      auto z = dLogits->pixel(i);
      const double k = scale * m * w / den;
      for (std::size_t c = 0; c < kNumClasses; ++c) z[c] += k * (p[c] - (label[i] == c ? 1.0 : 0.0));
    }
  }
  return num / den;
}

struct SegmentationLoss {
  double dice = 0.0;
  double ce = 0.0;
  double total = 0.0;
};

/// Dice + ceWeight * CE over the (optionally masked) pixels.
inline SegmentationLoss segmentationLoss(const ProbabilityMap& probs, const LabelMap& label,
                                         const ClassWeights& classWeights, double ceWeight,
                                         std::span<const double> mask = {},
                                         PixelGrid<ProbabilityTag>* dLogits = nullptr, double scale = 1.0) {
  SegmentationLoss l;
  l.dice = diceLoss(probs, label, classWeights, mask, dLogits, scale);
  l.ce = ceLoss(probs, label, mask, classWeights, dLogits, scale * ceWeight);
  l.total = l.dice + ceWeight * l.ce;
  return l;
}

/// 1 where the most confident class exceeds tauConf.
inline std::vector<double> confidenceMask(const ProbabilityMap& probs, double tauConf) {
  std::vector<double> m(probs.pixelCount(), 0.0);
  for (std::size_t i = 0; i < probs.pixelCount(); ++i) {
    auto p = probs.pixel(i);
    m[i] = *std::max_element(p.begin(), p.end()) > tauConf ? 1.0 : 0.0;
  }
  return m;
}

/// Loss against the integrated label.
inline double segLoss(const ProbabilityMap& probs, const LabelMap& integratedLabel, const ClassWeights& classWeights,
                      const ScheduleConfig& cfg = {}) {
  return segmentationLoss(probs, integratedLabel, classWeights, cfg.ceWeight).total;
}

/// Loss against the teacher pseudo-label on the student's confident pixels only.
inline double confLoss(const ProbabilityMap& probs, const LabelMap& pseudoLabel, const ClassWeights& classWeights,
                       double tauConf, const ScheduleConfig& cfg = {}) {
  const auto mask = confidenceMask(probs, tauConf);
  return segmentationLoss(probs, pseudoLabel, classWeights, cfg.ceWeight, mask).total;
}

struct AdaptTargets {
  const LabelMap* integrated = nullptr;
  const LabelMap* pseudo = nullptr;
  ClassWeights integratedWeights{};
  ClassWeights teacherWeights{};
  double lambda = 0.1;
  double ceWeight = 1.0;
  double tauConf = 0.8;
};

/// Scheduled class weights times the pixel-level class balance of each label.
inline AdaptTargets makeTargets(const LabelMap& integrated, const LabelMap& pseudo, double t,
                                const ScheduleConfig& schedule, const ThresholdConfig& thresholds) {
  const auto sw = classWeightSchedule(t, schedule);
  AdaptTargets a;
  a.integrated = &integrated;
  a.pseudo = &pseudo;
  a.integratedWeights = multiply(sw.integrated, pixelClassBalanceWeights(integrated));
  a.teacherWeights = multiply(sw.teacher, pixelClassBalanceWeights(pseudo));
  a.lambda = lambdaSchedule(t, schedule);
  a.ceWeight = schedule.ceWeight;
  a.tauConf = thresholds.tauConf;
  return a;
}

// AdaptTargets keeps pointers to the labels; temporaries would dangle.
AdaptTargets makeTargets(LabelMap&&, const LabelMap&, double, const ScheduleConfig&, const ThresholdConfig&) = delete;
AdaptTargets makeTargets(const LabelMap&, LabelMap&&, double, const ScheduleConfig&, const ThresholdConfig&) = delete;
AdaptTargets makeTargets(LabelMap&&, LabelMap&&, double, const ScheduleConfig&, const ThresholdConfig&) = delete;

struct AdaptLossTerms {
  double seg = 0.0;
  double conf = 0.0;
  double adapt = 0.0;
};

/// lambda * conf + (1 - lambda) * seg. The confidence mask is computed from `probs`
/// unless a frozen one is supplied.
inline AdaptLossTerms adaptLossTerms(const ProbabilityMap& probs, const AdaptTargets& t,
                                     std::span<const double> frozenMask = {},
                                     PixelGrid<ProbabilityTag>* dLogits = nullptr) {
  std::vector<double> own;
  if (frozenMask.empty()) {
    own = confidenceMask(probs, t.tauConf);
    frozenMask = own;
  }
  AdaptLossTerms r;
  r.seg = segmentationLoss(probs, *t.integrated, t.integratedWeights, t.ceWeight, {}, dLogits, 1.0 - t.lambda).total;
  r.conf = segmentationLoss(probs, *t.pseudo, t.teacherWeights, t.ceWeight, frozenMask, dLogits, t.lambda).total;
  r.adapt = t.lambda * r.conf + (1.0 - t.lambda) * r.seg;
  return r;
}

inline double adaptLoss(const ProbabilityMap& probs, const LabelMap& integratedLabel, const LabelMap& pseudoLabel,
                        double t, const ScheduleConfig& schedule = {}, const ThresholdConfig& thresholds = {}) {
  return adaptLossTerms(probs, makeTargets(integratedLabel, pseudoLabel, t, schedule, thresholds)).adapt;
}

struct GradientResult {
  AdaptLossTerms loss;
  std::vector<double> gradient;
};

/// Analytic parameter gradient of the adaptation loss (confidence mask held constant).
inline GradientResult gradient(const TinyModel& model, const InputImage& input, const AdaptTargets& targets,
                               std::span<const double> frozenMask = {}) {
  const auto z = model.logits(input);
  const auto p = TinyModel::softmax(z);
  PixelGrid<ProbabilityTag> dz(z.height(), z.width(), z.channels());
  GradientResult r;
  r.loss = adaptLossTerms(p, targets, frozenMask, &dz);
  r.gradient = model.backward(input, dz);
  return r;
}

// ---------------------------------------------------------------------------
// EMA and augmentation
// ---------------------------------------------------------------------------

/// teacher <- alpha * teacher + (1 - alpha) * student
inline void emaUpdate(TinyModel& teacher, const TinyModel& student, double alpha) {
  auto& t = teacher.parameters();
  const auto& s = student.parameters();
  if (t.size() != s.size()) throw ArgumentError("teacher and student differ in shape");
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = alpha * t[i] + (1.0 - alpha) * s[i];
}

struct AugmentConfig {
  double teacherSigma = 0.01;
  std::vector<double> studentSigmas{0.2, 0.1};  // drawn uniformly
  double contrastFactor = 0.2;                  // C = 1 + 2a(u - 1/2)
  bool contrast = true;
};

inline InputImage addGaussianNoise(const InputImage& x, double sigma, std::mt19937_64& rng) {
  InputImage out = x;
  if (sigma == 0.0) return out;
  std::normal_distribution<double> n(0.0, sigma);
  for (double& v : out.values()) v += n(rng);
  return out;
}

inline InputImage augmentWeak(const InputImage& x, std::mt19937_64& rng, const AugmentConfig& cfg = {}) {
  return addGaussianNoise(x, cfg.teacherSigma, rng);
}

inline InputImage augmentStrong(const InputImage& x, std::mt19937_64& rng, const AugmentConfig& cfg = {}) {
  double sigma = 0.0;
  if (!cfg.studentSigmas.empty()) {
    std::uniform_int_distribution<std::size_t> pick(0, cfg.studentSigmas.size() - 1);
    sigma = cfg.studentSigmas[pick(rng)];
  }
  InputImage out = addGaussianNoise(x, sigma, rng);
  if (cfg.contrast) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double c = 1.0 + 2.0 * cfg.contrastFactor * (u(rng) - 0.5);
    for (double& v : out.values()) v *= c;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimisation
// ---------------------------------------------------------------------------

struct OptimizerConfig {
  double learningRate = 8e-5;
  double lrMultiplier = 1.0;
  bool adam = false;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg = {}) : cfg_(cfg) {}

  void step(std::vector<double>& params, const std::vector<double>& grad) {
    const double lr = cfg_.learningRate * cfg_.lrMultiplier;
    if (!cfg_.adam) {
      for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grad[i];
      return;
    }
    if (m_.size() != params.size()) {
      m_.assign(params.size(), 0.0);
      v_.assign(params.size(), 0.0);
    }
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, double(t_)), c2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
      params[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + cfg_.epsilon);
    }
  }

 private:
  OptimizerConfig cfg_;
  std::vector<double> m_, v_;
  std::size_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Training loops
// ---------------------------------------------------------------------------

struct AdaptationSample {
  InputImage input;
  LabelMap integratedLabel;
  ScanKind kind = ScanKind::Macula6;
};

struct LabeledSample {
  InputImage input;
  LabelMap truth;
  ScanKind kind = ScanKind::Macula6;
};

struct AdaptationConfig {
  ScheduleConfig schedule{};
  ThresholdConfig thresholds{};
  AugmentConfig augment{};
  OptimizerConfig optimizer{};
  std::uint64_t seed = 2024;
};

struct AdaptationState {
  TinyModel student;
  TinyModel teacher;
  std::size_t epoch = 0;
  std::size_t step = 0;
  std::mt19937_64 rng;
  Optimizer optimizer;

  /// Student and teacher both start from the source model.
  static AdaptationState fromSource(const TinyModel& source, const AdaptationConfig& cfg) {
    return AdaptationState{source, source, 0, 0, std::mt19937_64(cfg.seed), Optimizer(cfg.optimizer)};
  }
};

struct LogRow {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double lambda = 0.0;
  double segLoss = 0.0;
  double confLoss = 0.0;
  double adaptLoss = 0.0;
  double heldoutDiceA = 0.0;  // percent
  double heldoutDiceV = 0.0;
  double heldoutDiceF = 0.0;
};

struct DiceSummary {
  double artery = 0.0;
  double vein = 0.0;
  double faz = 0.0;
};

/// Mean per-class Dice (percent) of the model's argmax over the samples.
inline DiceSummary meanDice(const TinyModel& model, std::span<const LabeledSample> samples) {
  DiceSummary d;
  if (samples.empty()) return d;
  for (const auto& s : samples) {
    const auto pred = argmaxLabels(model.forward(s.input));
    d.artery += metrics::dice(pred, s.truth, classId(CavfClass::Artery));
    d.vein += metrics::dice(pred, s.truth, classId(CavfClass::Vein));
    d.faz += metrics::dice(pred, s.truth, classId(CavfClass::Faz));
  }
  const double k = 100.0 / static_cast<double>(samples.size());
  d.artery *= k;
  d.vein *= k;
  d.faz *= k;
  return d;
}

struct AdaptationResult {
  TinyModel student;
  TinyModel teacher;
  std::vector<LogRow> log;
};

/// Self-training loop: one view per step, one pass over the views per epoch.
inline AdaptationResult runAdaptation(std::span<const AdaptationSample> dataset, std::span<const LabeledSample> heldout,
                                      AdaptationState state, const AdaptationConfig& cfg) {
  if (dataset.empty()) throw ArgumentError("runAdaptation needs a non-empty dataset");
  cfg.schedule.check();
  cfg.thresholds.check();
  const std::size_t epochs = static_cast<std::size_t>(std::ceil(cfg.schedule.epochs));
  const double n = static_cast<double>(dataset.size());
  AdaptationResult res;

  auto logRow = [&](std::size_t epoch, double lambda, double seg, double conf, double adapt) {
    const auto d = meanDice(state.student, heldout);
    res.log.push_back({epoch, state.step, lambda, seg, conf, adapt, d.artery, d.vein, d.faz});
  };

  logRow(0, lambdaSchedule(0.0, cfg.schedule), 0.0, 0.0, 0.0);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t e = 0; e < epochs; ++e) {
    std::shuffle(order.begin(), order.end(), state.rng);
    double seg = 0.0, conf = 0.0, adapt = 0.0, lambda = 0.0;
    for (std::size_t s = 0; s < order.size(); ++s) {
      const auto& sample = dataset[order[s]];
      const double t = static_cast<double>(e) + static_cast<double>(s) / n;
      const auto weak = augmentWeak(sample.input, state.rng, cfg.augment);
      const auto pseudo = generatePseudoLabel(state.teacher.forward(weak), sample.kind, cfg.thresholds);
      const auto strong = augmentStrong(sample.input, state.rng, cfg.augment);
      const auto targets = makeTargets(sample.integratedLabel, pseudo, t, cfg.schedule, cfg.thresholds);
      auto g = gradient(state.student, strong, targets);
      state.optimizer.step(state.student.parameters(), g.gradient);
      emaUpdate(state.teacher, state.student, cfg.schedule.emaAlpha);
      seg += g.loss.seg;
      conf += g.loss.conf;
      adapt += g.loss.adapt;
      lambda = targets.lambda;
      ++state.step;
    }
    state.epoch = e + 1;
    logRow(e + 1, lambda, seg / n, conf / n, adapt / n);
  }
  res.student = state.student;
  res.teacher = state.teacher;
  return res;
}

struct SupervisedConfig {
  std::size_t epochs = 30;
  OptimizerConfig optimizer{0.05, 1.0, true};
  double ceWeight = 1.0;
  std::uint64_t seed = 11;
};

/// Fully supervised fit of a model on labeled samples (used to produce the frozen source model).
inline TinyModel trainSupervised(std::span<const LabeledSample> samples, TinyModel model,
                                 const SupervisedConfig& cfg = {}) {
  if (samples.empty()) throw ArgumentError("trainSupervised needs samples");
  Optimizer opt(cfg.optimizer);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (auto i : order) {
      const auto& s = samples[i];
      const auto z = model.logits(s.input);
      const auto p = TinyModel::softmax(z);
      PixelGrid<ProbabilityTag> dz(z.height(), z.width(), z.channels());
      segmentationLoss(p, s.truth, pixelClassBalanceWeights(s.truth), cfg.ceWeight, {}, &dz);
      opt.step(model.parameters(), model.backward(s.input, dz));
    }
  }
  return model;
}

}  // namespace grinadapt::adaptation
