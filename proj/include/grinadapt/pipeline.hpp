#pragma once

// End-to-end orchestration: synthesis -> source model -> two-stage registration
// -> integration -> adaptation -> evaluation. Pure given the configuration; file
// output is left to the caller.

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "grinadapt/adaptation.hpp"
#include "grinadapt/core.hpp"
#include "grinadapt/integration.hpp"
#include "grinadapt/metrics.hpp"
#include "grinadapt/parallel.hpp"
#include "grinadapt/registration.hpp"
#include "grinadapt/synth.hpp"
#include "grinadapt/tiny_model.hpp"

namespace grinadapt::pipeline {

using integration::SubjectBag;

inline bool isOcta(ScanKind k) { return k != ScanKind::Auxiliary; }

// ---------------------------------------------------------------------------
// Two-stage registration of one subject
// ---------------------------------------------------------------------------

struct SubjectRegistration {
  registration::BagRegistration stageOne;
  registration::BagRegistration stageTwo;
  bool success = false;
  std::string failure;
};

inline std::vector<VesselnessMap> commonVesselness(const SubjectBag& bag, std::span<const std::size_t> views,
                                                   std::size_t common) {
  std::vector<VesselnessMap> out;
  for (auto i : views)
    out.push_back(registration::extractVesselness(
        integration::toCommonSpace(integration::viewPrediction(bag.views[i]), bag.views[i].kind, common)));
  return out;
}

/// Stage one aligns the macula-centred views; stage two aligns the fused macula
/// composite (always the initial anchor) with the disc, wide-field and auxiliary views.
inline SubjectRegistration registerSubject(const SubjectBag& bag, const registration::BagConfig& cfg = {},
                                           const integration::IntegrationPolicy& policy = {}) {
  SubjectRegistration r;
  const auto plan = integration::planStages(bag);
  if (plan.stageOne.empty()) {
    r.failure = "no macula-centred view";
    return r;
  }
  if (plan.stageOne.size() == 1) {
    r.stageOne = integration::singleViewRegistration();
  } else {
    r.stageOne = registration::registerBag(commonVesselness(bag, plan.stageOne, policy.commonSize), cfg);
    if (!r.stageOne.success) {
      r.failure = "stage one failed on all anchors";
      return r;
    }
  }
  if (plan.stageTwo.empty()) {
    r.stageTwo = integration::singleViewRegistration();
  } else {
    std::vector<VesselnessMap> maps;
    maps.push_back(registration::extractVesselness(integration::maculaComposite(bag, r.stageOne, policy)));
    for (auto& m : commonVesselness(bag, plan.stageTwo, policy.commonSize)) maps.push_back(std::move(m));
    auto cfg2 = cfg;
    cfg2.initialAnchor = 0;
    r.stageTwo = registration::registerBag(maps, cfg2);
    if (!r.stageTwo.success) {
      r.failure = "stage two failed on all anchors";
      return r;
    }
  }
  r.success = true;
  return r;
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Target scanner domains: each OCTA view gets its own intensity shift.
inline synth::SynthConfig targetSynthConfig() {
  synth::SynthConfig cfg;
  for (auto& v : cfg.views) {
    if (v.domain == "D1") v.style = {0.9, 0.03, 0.55, 0.12, 0.08};
    if (v.domain == "D2") v.style = {1.1, -0.02, 0.6, 0.08, 0.06};
    if (v.domain == "D3") v.style = {0.95, 0.02, 0.5, 0.14, 0.12};
    if (v.domain == "D4") v.style = {1.05, 0.03, 0.6, 0.1, 0.08};
    if (v.domain == "D5") v.style = {0.9, 0.04, 0.55, 0.09, 0.1};
  }
  return cfg;
}

/// Per-pixel linear model on 256x256 maps: the base step size is scaled up by the multiplier.
inline adaptation::AdaptationConfig defaultAdaptationConfig() {
  adaptation::AdaptationConfig a;
  a.optimizer.lrMultiplier = 2000.0;
  return a;
}

inline adaptation::SupervisedConfig defaultSourceTraining() {
  adaptation::SupervisedConfig s;
  s.epochs = 10;
  return s;
}

struct PipelineConfig {
  synth::SynthConfig synth = targetSynthConfig();
  synth::DomainStyle sourceStyle{};
  std::size_t subjects = 30;
  std::size_t sourceSubjects = 6;
  double trainFraction = 0.6;
  std::size_t modelKernel = 5;
  double modelInitScale = 0.01;
  registration::BagConfig registration{};
  integration::IntegrationPolicy policy{};
  adaptation::AdaptationConfig adaptation = defaultAdaptationConfig();
  adaptation::SupervisedConfig source = defaultSourceTraining();
  std::uint64_t seed = 7;
  std::size_t workers = 1;
};

inline std::uint64_t subjectSeed(std::uint64_t seed, std::size_t i, bool source = false) {
  return seed * 1000003ULL + (source ? 500000ULL : 0ULL) + i;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

inline constexpr std::uint8_t kEvalClasses[] = {classId(CavfClass::Artery), classId(CavfClass::Vein),
                                                classId(CavfClass::Faz)};

/// Dice (%) and ASSD per evaluated class, plus the disc FAZ score on disc scans.
inline metrics::ImageRecord evaluateView(const LabelMap& pred, const LabelMap& truth, ScanKind kind,
                                         std::map<std::string, std::string> keys) {
  metrics::ImageRecord r;
  r.keys = std::move(keys);
  for (auto c : kEvalClasses) {
    const std::string n(className(c));
    if (c == classId(CavfClass::Faz) && kind == ScanKind::Disc6) {
      r.values["fazDisc"] = metrics::fazDiscScore(pred, kind);
      continue;
    }
    r.values["dice" + n] = 100.0 * metrics::dice(pred, truth, c);
    r.values["assd" + n] = metrics::assd(pred, truth, c);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Full run
// ---------------------------------------------------------------------------

struct SubjectRun {
  synth::Subject subject;
  bool train = false;
  SubjectRegistration registration;
  std::optional<integration::IntegrationResult> integration;
};

struct MethodScore {
  double meanAV = 0.0;  // mean of artery and vein Dice (%) over held-out OCTA views
  double dice[kNumClasses] = {};
  std::size_t views = 0;
};

struct PipelineResult {
  TinyModel sourceModel;
  TinyModel adaptedModel;
  TinyModel teacherModel;
  std::vector<adaptation::LogRow> log;
  std::vector<SubjectRun> subjects;
  std::vector<std::string> excluded;
  std::vector<metrics::ImageRecord> records;
  metrics::EvalReport byMethod;
  metrics::EvalReport byMethodDomain;
  MethodScore source, adapted, integrated;
  std::size_t discFazFalsePositives = 0;  // adapted model, held-out disc scans
};

inline std::vector<adaptation::LabeledSample> labeledViews(const synth::Subject& s) {
  std::vector<adaptation::LabeledSample> out;
  for (std::size_t v = 0; v < s.bag.views.size(); ++v)
    if (isOcta(s.bag.views[v].kind)) out.push_back({s.inputs[v], s.viewTruth[v], s.bag.views[v].kind});
  return out;
}

inline TinyModel trainSourceModel(const PipelineConfig& cfg) {
  auto sc = cfg.synth;
  for (auto& v : sc.views) {
    v.style = cfg.sourceStyle;
    v.corruption = {};
  }
  std::vector<adaptation::LabeledSample> samples;
  for (std::size_t i = 0; i < cfg.sourceSubjects; ++i)
    for (auto& s : labeledViews(synth::generateSubject(sc, subjectSeed(cfg.seed, i, true)))) samples.push_back(std::move(s));
  return adaptation::trainSupervised(samples, TinyModel::random(2, cfg.modelKernel, kNumClasses, cfg.seed,
                                                                cfg.modelInitScale),
                                     cfg.source);
}

/// Replaces every OCTA view's prediction with the model's output on its input.
inline void predictViews(synth::Subject& s, const TinyModel& model) {
  for (std::size_t v = 0; v < s.bag.views.size(); ++v)
    if (isOcta(s.bag.views[v].kind)) s.bag.views[v].prediction = model.forward(s.inputs[v]);
}

inline MethodScore summarize(const std::vector<metrics::ImageRecord>& records, const std::string& method) {
  MethodScore m;
  double av = 0.0;
  std::size_t counts[kNumClasses] = {};
  for (const auto& r : records) {
    if (r.keys.at("method") != method) continue;
    ++m.views;
    av += (*r.values.at("diceA") + *r.values.at("diceV")) / 2.0;
    for (auto c : kEvalClasses) {
      auto it = r.values.find("dice" + std::string(className(c)));
      if (it == r.values.end() || !it->second) continue;
      m.dice[c] += *it->second;
      ++counts[c];
    }
  }
  if (m.views) m.meanAV = av / double(m.views);
  for (std::size_t c = 0; c < kNumClasses; ++c)
    if (counts[c]) m.dice[c] /= double(counts[c]);
  return m;
}

inline std::vector<synth::Subject> synthesizeSubjects(const PipelineConfig& cfg) {
  std::vector<synth::Subject> out(cfg.subjects);
  parallelFor(cfg.subjects, cfg.workers,
              [&](std::size_t i) { out[i] = synth::generateSubject(cfg.synth, subjectSeed(cfg.seed, i)); });
  return out;
}

/// Runs everything after synthesis. The first round(trainFraction * n) subjects train,
/// the rest are held out. OCTA predictions are replaced by the source model's.
inline PipelineResult runPipelineOn(std::vector<synth::Subject> subjects, const PipelineConfig& cfg,
                                    std::optional<TinyModel> source = std::nullopt) {
  if (subjects.size() < 2) throw ConfigError("pipeline needs at least two subjects");
  if (!(cfg.trainFraction > 0.0 && cfg.trainFraction < 1.0)) throw ConfigError("trainFraction must lie in (0,1)");
  PipelineResult res;
  res.sourceModel = source ? std::move(*source) : trainSourceModel(cfg);

  const std::size_t n = subjects.size();
  const std::size_t nTrain = static_cast<std::size_t>(std::lround(cfg.trainFraction * double(n)));
  res.subjects.resize(n);
  parallelFor(n, cfg.workers, [&](std::size_t i) {
    auto& run = res.subjects[i];
    run.subject = std::move(subjects[i]);
    run.train = i < nTrain;
    predictViews(run.subject, res.sourceModel);
    run.registration = registerSubject(run.subject.bag, cfg.registration, cfg.policy);
    if (run.registration.success)
      run.integration = integration::integrateSubject(run.subject.bag, run.registration.stageOne,
                                                      run.registration.stageTwo, cfg.policy);
  });

  std::vector<adaptation::AdaptationSample> train;
  std::vector<adaptation::LabeledSample> heldout;
  for (const auto& run : res.subjects) {
    if (!run.integration) {
      res.excluded.push_back(run.subject.id);
      continue;
    }
    const auto& s = run.subject;
    for (std::size_t v = 0; v < s.bag.views.size(); ++v) {
      if (!isOcta(s.bag.views[v].kind)) continue;
      if (run.train)
        train.push_back({s.inputs[v], run.integration->labels[v].hardLabel, s.bag.views[v].kind});
      else
        heldout.push_back({s.inputs[v], s.viewTruth[v], s.bag.views[v].kind});
    }
  }
  if (train.empty()) throw AdaptationError("no registered training subject");

  auto state = adaptation::AdaptationState::fromSource(res.sourceModel, cfg.adaptation);
  auto adapted = adaptation::runAdaptation(train, heldout, std::move(state), cfg.adaptation);
  res.adaptedModel = adapted.student;
  res.teacherModel = adapted.teacher;
  res.log = std::move(adapted.log);

  for (const auto& run : res.subjects) {
    if (run.train || !run.integration) continue;
    const auto& s = run.subject;
    for (std::size_t v = 0; v < s.bag.views.size(); ++v) {
      const auto& view = s.bag.views[v];
      if (!isOcta(view.kind)) continue;
      const std::string kind(toString(view.kind));
      const auto adaptedPred = argmaxLabels(res.adaptedModel.forward(s.inputs[v]));
      if (view.kind == ScanKind::Disc6) res.discFazFalsePositives += adaptedPred.count(classId(CavfClass::Faz));
      res.records.push_back(evaluateView(run.integration->labels[v].hardLabel, s.viewTruth[v], view.kind,
                                         {{"method", "integrated"}, {"domain", view.domain}, {"kind", kind}}));
      res.records.push_back(evaluateView(argmaxLabels(view.prediction), s.viewTruth[v], view.kind,
                                         {{"method", "source"}, {"domain", view.domain}, {"kind", kind}}));
      res.records.push_back(evaluateView(adaptedPred, s.viewTruth[v], view.kind,
                                         {{"method", "adapted"}, {"domain", view.domain}, {"kind", kind}}));
    }
  }
  res.byMethod = metrics::aggregate(res.records, {"method"});
  res.byMethodDomain = metrics::aggregate(res.records, {"method", "domain"});
  res.source = summarize(res.records, "source");
  res.adapted = summarize(res.records, "adapted");
  res.integrated = summarize(res.records, "integrated");
  return res;
}

inline PipelineResult runPipeline(const PipelineConfig& cfg) {
  if (cfg.subjects < 2) throw ConfigError("pipeline needs at least two subjects");
  return runPipelineOn(synthesizeSubjects(cfg), cfg);
}

}  // namespace grinadapt::pipeline
