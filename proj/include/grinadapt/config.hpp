#pragma once

// RunConfig: every tunable of the pipeline as one JSON document. Missing keys
// keep their defaults; unknown keys are rejected with ConfigError.

#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <string>

#include "json.hpp"

#include "grinadapt/core.hpp"
#include "grinadapt/pipeline.hpp"

namespace grinadapt::config {

using json = nlohmann::json;

namespace detail {

/// Reads known fields from one JSON object and remembers which keys were consumed.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <class T>
  void field(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }

  template <class Fn>
  void object(const char* key, Fn&& fn) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    ObjectReader sub(*it, path_ + "." + key);
    fn(sub);
    sub.finish();
  }

  const json* raw(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  const std::string& path() const { return path_; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(path_ + ": unknown key '" + it.key() + "'");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline json bound(double v) { return std::isinf(v) ? json("inf") : json(v); }

inline double parseBound(const json& j, const std::string& where) {
  if (j.is_string() && j.get<std::string>() == "inf") return std::numeric_limits<double>::infinity();
  if (j.is_number()) return j.get<double>();
  throw ConfigError(where + ": expected a number or \"inf\"");
}

}  // namespace detail

using RunConfig = pipeline::PipelineConfig;

inline json toJson(const RunConfig& c) {
  const auto& a = c.adaptation;
  const auto& r = c.registration;
  json bands = json::array();
  for (const auto& b : a.thresholds.fazBands) bands.push_back({detail::bound(b.upperFraction), b.threshold});
  json views = json::array();
  for (const auto& v : c.synth.views)
    views.push_back({{"domain", v.domain},
                     {"kind", std::string(toString(v.kind))},
                     {"size", v.size},
                     {"offset", {v.offset.x, v.offset.y}},
                     {"planted", v.planted},
                     {"corruptionLevel", v.corruption.level},
                     {"style", {{"gain", v.style.gain}, {"bias", v.style.bias}, {"avGain", v.style.avGain},
                                {"avBias", v.style.avBias}, {"noise", v.style.noise}}}});
  const auto& t = r.pair.ransac.thresholds;
  return {
      {"seed", c.seed},
      {"subjects", c.subjects},
      {"sourceSubjects", c.sourceSubjects},
      {"trainFraction", c.trainFraction},
      {"model", {{"kernel", c.modelKernel}, {"initScale", c.modelInitScale}}},
      {"thresholds",
       {{"tauArtery", a.thresholds.tauArtery},
        {"tauVein", a.thresholds.tauVein},
        {"tauCapillary", a.thresholds.tauCapillary},
        {"tauConf", a.thresholds.tauConf},
        {"fazBands", bands}}},
      {"schedule",
       {{"lambdaMin", a.schedule.lambdaMin},
        {"lambdaMax", a.schedule.lambdaMax},
        {"epochs", a.schedule.epochs},
        {"emaAlpha", a.schedule.emaAlpha},
        {"ceWeight", a.schedule.ceWeight},
        {"teacherMin", a.schedule.teacherMin},
        {"teacherMax", a.schedule.teacherMax},
        {"integratedMin", a.schedule.integratedMin},
        {"integratedMax", a.schedule.integratedMax}}},
      {"augment",
       {{"teacherSigma", a.augment.teacherSigma},
        {"studentSigmas", a.augment.studentSigmas},
        {"contrastFactor", a.augment.contrastFactor},
        {"contrast", a.augment.contrast}}},
      {"optimizer",
       {{"learningRate", a.optimizer.learningRate},
        {"lrMultiplier", a.optimizer.lrMultiplier},
        {"adam", a.optimizer.adam},
        {"beta1", a.optimizer.beta1},
        {"beta2", a.optimizer.beta2},
        {"epsilon", a.optimizer.epsilon}}},
      {"adaptationSeed", a.seed},
      {"sourceTraining",
       {{"epochs", c.source.epochs},
        {"learningRate", c.source.optimizer.learningRate},
        {"adam", c.source.optimizer.adam},
        {"seed", c.source.seed}}},
      {"detector",
       {{"smoothingSigma", r.pair.detector.smoothingSigma},
        {"integrationSigma", r.pair.detector.integrationSigma},
        {"harrisK", r.pair.detector.harrisK},
        {"relativeThreshold", r.pair.detector.relativeThreshold},
        {"absoluteThreshold", r.pair.detector.absoluteThreshold},
        {"nmsRadius", r.pair.detector.nmsRadius},
        {"maxKeypoints", r.pair.detector.maxKeypoints}}},
      {"ransac",
       {{"iterations", r.pair.ransac.iterations},
        {"inlierThresholdPx", r.pair.ransac.inlierThresholdPx},
        {"refineThresholdPx", r.pair.ransac.refineThresholdPx},
        {"minInliers", r.pair.ransac.minInliers},
        {"minCorrespondences", r.pair.ransac.minCorrespondences},
        {"fullHomography", r.pair.ransac.fullHomography},
        {"seed", r.pair.ransac.seed}}},
      {"validation",
       {{"scaleMin", t.scaleMin},
        {"scaleMax", t.scaleMax},
        {"rotMaxDeg", t.rotMaxDeg},
        {"shearMax", t.shearMax},
        {"perspMax", t.perspMax},
        {"translationMax", t.translationMax ? json(*t.translationMax) : json(nullptr)}}},
      {"registration",
       {{"ratio", r.pair.ratio},
        {"initialAnchor", r.initialAnchor},
        {"extraTrial", r.extraTrial},
        {"kmeansK", r.kmeans.k},
        {"kmeansIterations", r.kmeans.iterations},
        {"kmeansSeed", r.kmeans.seed}}},
      {"policy", {{"discRadius", c.policy.discRadius}}},
      {"synth",
       {{"canvas", c.synth.canvas},
        {"worldSize", c.synth.worldSize},
        {"fazRadius", c.synth.fazRadius},
        {"capillaryDensity", c.synth.capillaryDensity},
        {"discBlobStrength", c.synth.discBlobStrength},
        {"treeDepth", c.synth.tree.depth},
        {"trunksPerType", c.synth.tree.trunksPerType},
        {"rotationDeg", c.synth.ranges.rotationDeg},
        {"scaleDelta", c.synth.ranges.scaleDelta},
        {"translation", c.synth.ranges.translation},
        {"shear", c.synth.ranges.shear},
        {"views", views}}},
  };
}

inline RunConfig fromJson(const json& j) {
  RunConfig c;
  auto& a = c.adaptation;
  auto& r = c.registration;
  detail::ObjectReader root(j, "config");
  root.field("seed", c.seed);
  root.field("subjects", c.subjects);
  root.field("sourceSubjects", c.sourceSubjects);
  root.field("trainFraction", c.trainFraction);
  root.object("model", [&](auto& o) {
    o.field("kernel", c.modelKernel);
    o.field("initScale", c.modelInitScale);
  });
  root.object("thresholds", [&](auto& o) {
    o.field("tauArtery", a.thresholds.tauArtery);
    o.field("tauVein", a.thresholds.tauVein);
    o.field("tauCapillary", a.thresholds.tauCapillary);
    o.field("tauConf", a.thresholds.tauConf);
    if (const json* b = o.raw("fazBands")) {
      if (!b->is_array()) throw ConfigError(o.path() + ".fazBands: expected an array");
      a.thresholds.fazBands.clear();
      for (const auto& e : *b) {
        if (!e.is_array() || e.size() != 2 || !e[1].is_number())
          throw ConfigError(o.path() + ".fazBands: expected [bound, threshold] pairs");
        a.thresholds.fazBands.push_back({detail::parseBound(e[0], o.path() + ".fazBands"), e[1].get<double>()});
      }
    }
  });
  root.object("schedule", [&](auto& o) {
    o.field("lambdaMin", a.schedule.lambdaMin);
    o.field("lambdaMax", a.schedule.lambdaMax);
    o.field("epochs", a.schedule.epochs);
    o.field("emaAlpha", a.schedule.emaAlpha);
    o.field("ceWeight", a.schedule.ceWeight);
    o.field("teacherMin", a.schedule.teacherMin);
    o.field("teacherMax", a.schedule.teacherMax);
    o.field("integratedMin", a.schedule.integratedMin);
    o.field("integratedMax", a.schedule.integratedMax);
  });
  root.object("augment", [&](auto& o) {
    o.field("teacherSigma", a.augment.teacherSigma);
    o.field("studentSigmas", a.augment.studentSigmas);
    o.field("contrastFactor", a.augment.contrastFactor);
    o.field("contrast", a.augment.contrast);
  });
  root.object("optimizer", [&](auto& o) {
    o.field("learningRate", a.optimizer.learningRate);
    o.field("lrMultiplier", a.optimizer.lrMultiplier);
    o.field("adam", a.optimizer.adam);
    o.field("beta1", a.optimizer.beta1);
    o.field("beta2", a.optimizer.beta2);
    o.field("epsilon", a.optimizer.epsilon);
  });
  root.field("adaptationSeed", a.seed);
  root.object("sourceTraining", [&](auto& o) {
    o.field("epochs", c.source.epochs);
    o.field("learningRate", c.source.optimizer.learningRate);
    o.field("adam", c.source.optimizer.adam);
    o.field("seed", c.source.seed);
  });
  root.object("detector", [&](auto& o) {
    o.field("smoothingSigma", r.pair.detector.smoothingSigma);
    o.field("integrationSigma", r.pair.detector.integrationSigma);
    o.field("harrisK", r.pair.detector.harrisK);
    o.field("relativeThreshold", r.pair.detector.relativeThreshold);
    o.field("absoluteThreshold", r.pair.detector.absoluteThreshold);
    o.field("nmsRadius", r.pair.detector.nmsRadius);
    o.field("maxKeypoints", r.pair.detector.maxKeypoints);
  });
  root.object("ransac", [&](auto& o) {
    o.field("iterations", r.pair.ransac.iterations);
    o.field("inlierThresholdPx", r.pair.ransac.inlierThresholdPx);
    o.field("refineThresholdPx", r.pair.ransac.refineThresholdPx);
    o.field("minInliers", r.pair.ransac.minInliers);
    o.field("minCorrespondences", r.pair.ransac.minCorrespondences);
    o.field("fullHomography", r.pair.ransac.fullHomography);
    o.field("seed", r.pair.ransac.seed);
  });
  root.object("validation", [&](auto& o) {
    auto& t = r.pair.ransac.thresholds;
    o.field("scaleMin", t.scaleMin);
    o.field("scaleMax", t.scaleMax);
    o.field("rotMaxDeg", t.rotMaxDeg);
    o.field("shearMax", t.shearMax);
    o.field("perspMax", t.perspMax);
    if (const json* tm = o.raw("translationMax")) {
      if (tm->is_null()) t.translationMax.reset();
      else if (tm->is_number()) t.translationMax = tm->get<double>();
      else throw ConfigError(o.path() + ".translationMax: expected a number or null");
    }
  });
  root.object("registration", [&](auto& o) {
    o.field("ratio", r.pair.ratio);
    o.field("initialAnchor", r.initialAnchor);
    o.field("extraTrial", r.extraTrial);
    o.field("kmeansK", r.kmeans.k);
    o.field("kmeansIterations", r.kmeans.iterations);
    o.field("kmeansSeed", r.kmeans.seed);
  });
  root.object("policy", [&](auto& o) { o.field("discRadius", c.policy.discRadius); });
  root.object("synth", [&](auto& o) {
    o.field("canvas", c.synth.canvas);
    o.field("worldSize", c.synth.worldSize);
    o.field("fazRadius", c.synth.fazRadius);
    o.field("capillaryDensity", c.synth.capillaryDensity);
    o.field("discBlobStrength", c.synth.discBlobStrength);
    o.field("treeDepth", c.synth.tree.depth);
    o.field("trunksPerType", c.synth.tree.trunksPerType);
    o.field("rotationDeg", c.synth.ranges.rotationDeg);
    o.field("scaleDelta", c.synth.ranges.scaleDelta);
    o.field("translation", c.synth.ranges.translation);
    o.field("shear", c.synth.ranges.shear);
    if (const json* vs = o.raw("views")) {
      if (!vs->is_array()) throw ConfigError(o.path() + ".views: expected an array");
      c.synth.views.clear();
      for (std::size_t i = 0; i < vs->size(); ++i) {
        synth::ViewSpec v;
        detail::ObjectReader vr((*vs)[i], o.path() + ".views[" + std::to_string(i) + "]");
        vr.field("domain", v.domain);
        std::string kind = "macula6";
        vr.field("kind", kind);
        try {
          v.kind = parseScanKind(kind);
        } catch (const ArgumentError& e) {
          throw ConfigError(vr.path() + ": " + e.what());
        }
        vr.field("size", v.size);
        std::array<double, 2> off{0, 0};
        vr.field("offset", off);
        v.offset = {off[0], off[1]};
        vr.field("planted", v.planted);
        vr.field("corruptionLevel", v.corruption.level);
        vr.object("style", [&](auto& s) {
          s.field("gain", v.style.gain);
          s.field("bias", v.style.bias);
          s.field("avGain", v.style.avGain);
          s.field("avBias", v.style.avBias);
          s.field("noise", v.style.noise);
        });
        vr.finish();
        c.synth.views.push_back(std::move(v));
      }
    }
  });
  root.finish();

  c.registration.pair.detector = r.pair.detector;
  try {
    a.thresholds.check();
    a.schedule.check();
    r.pair.ransac.thresholds.check();
  } catch (const ArgumentError& e) {
    throw ConfigError(e.what());
  }
  if (c.subjects < 2) throw ConfigError("subjects must be at least 2");
  if (!(c.trainFraction > 0.0 && c.trainFraction < 1.0)) throw ConfigError("trainFraction must lie in (0,1)");
  return c;
}

inline RunConfig loadConfig(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(f);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  return fromJson(j);
}

}  // namespace grinadapt::config
