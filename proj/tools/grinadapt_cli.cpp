// grinadapt: synth | register | integrate | pseudolabel | adapt | evaluate | pipeline
//
// Exit codes: 0 success, 2 configuration error, 3 registration-stage failure,
// 4 adaptation failure, 1 anything else.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "grinadapt/config.hpp"
#include "grinadapt/manifest.hpp"
#include "grinadapt/pipeline.hpp"
#include "grinadapt/tensor_io.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace grinadapt;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRegistration = 3;
constexpr int kExitAdaptation = 4;

class RegistrationStageError : public Error {
 public:
  using Error::Error;
};

struct Options {
  std::string configPath;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::optional<std::size_t> subjects;
  std::string importDir;
  std::string modelPath;
  std::string baselinePath;
};

void writeText(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) throw FormatError("cannot write " + p.string());
  f << text;
}

void writeJson(const fs::path& p, const json& j) { writeText(p, j.dump(2) + "\n"); }

json readJson(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw FormatError("cannot open " + p.string());
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
}

config::RunConfig loadRunConfig(const Options& o) {
  config::RunConfig cfg = o.configPath.empty() ? config::RunConfig{} : config::loadConfig(o.configPath);
  if (o.seed) cfg.seed = *o.seed;
  if (o.subjects) {
    if (*o.subjects < 2) throw ConfigError("--subjects must be at least 2");
    cfg.subjects = *o.subjects;
  }
  cfg.workers = workerCount();
  return cfg;
}

// ---------------------------------------------------------------------------
// Subject persistence: <dir>/subjects/<id>/subject.json plus GRIT tensors.
// ---------------------------------------------------------------------------

void writeSubject(const fs::path& root, const synth::Subject& s) {
  const fs::path dir = root / "subjects" / s.id;
  fs::create_directories(dir);
  json views = json::array();
  for (std::size_t v = 0; v < s.bag.views.size(); ++v) {
    const auto& view = s.bag.views[v];
    const std::string stem = "view" + std::to_string(v);
    json jv{{"domain", view.domain}, {"kind", std::string(toString(view.kind))}, {"prediction", stem + ".prob.grit"}};
    io::saveTensor(view.prediction, dir / (stem + ".prob.grit"));
    if (v < s.viewTruth.size() && s.viewTruth[v].pixelCount() > 0) {
      io::writeTensor(io::toTensor(s.viewTruth[v]), dir / (stem + ".truth.grit"));
      jv["truth"] = stem + ".truth.grit";
    }
    if (v < s.inputs.size() && !s.inputs[v].empty()) {
      io::writeTensor(io::toTensor(s.inputs[v]), dir / (stem + ".input.grit"));
      jv["input"] = stem + ".input.grit";
    }
    if (v < s.planted.size()) jv["planted"] = s.planted[v].rowMajor();
    views.push_back(std::move(jv));
  }
  json j{{"subject", s.id}, {"views", views}};
  if (s.groundTruth.pixelCount() > 0) {
    io::writeTensor(io::toTensor(s.groundTruth), dir / "world.truth.grit");
    j["groundTruth"] = "world.truth.grit";
  }
  writeJson(dir / "subject.json", j);
}

synth::Subject readSubject(const fs::path& dir) {
  const json j = readJson(dir / "subject.json");
  synth::Subject s;
  try {
    s.id = j.at("subject").get<std::string>();
    s.bag.subjectId = s.id;
    if (j.contains("groundTruth")) s.groundTruth = io::labelsFromTensor(io::readTensor(dir / j["groundTruth"].get<std::string>()));
    for (const auto& jv : j.at("views")) {
      integration::BagView view;
      view.domain = jv.at("domain").get<std::string>();
      view.kind = parseScanKind(jv.at("kind").get<std::string>());
      view.prediction = io::loadTensor(dir / jv.at("prediction").get<std::string>());
      s.bag.views.push_back(std::move(view));
      s.viewTruth.push_back(jv.contains("truth") ? io::labelsFromTensor(io::readTensor(dir / jv["truth"].get<std::string>()))
                                                 : LabelMap{});
      s.inputs.push_back(jv.contains("input") ? io::gridFromTensor<InputImage>(io::readTensor(dir / jv["input"].get<std::string>()))
                                              : InputImage{});
      if (jv.contains("planted")) s.planted.emplace_back(jv["planted"].get<std::array<double, 9>>());
    }
  } catch (const json::exception& e) {
    throw FormatError((dir / "subject.json").string() + ": " + e.what());
  }
  return s;
}

std::vector<synth::Subject> loadOrSynthesize(const Options& o, const config::RunConfig& cfg) {
  if (o.importDir.empty()) return pipeline::synthesizeSubjects(cfg);
  const fs::path root = fs::path(o.importDir) / "subjects";
  if (!fs::is_directory(root)) throw ConfigError("--import directory has no subjects/ folder: " + o.importDir);
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && fs::exists(e.path() / "subject.json")) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw ConfigError("no subjects found under " + root.string());
  std::vector<synth::Subject> out;
  for (const auto& d : dirs) out.push_back(readSubject(d));
  return out;
}

TinyModel loadModel(const std::string& path) { return io::modelFromTensor(io::readTensor(path), 2); }

void saveModel(const TinyModel& m, const fs::path& p) {
  fs::create_directories(p.parent_path());
  io::writeTensor(io::toTensor(m), p);
}

// ---------------------------------------------------------------------------
// Stage writers
// ---------------------------------------------------------------------------

struct RegisteredSubject {
  pipeline::SubjectRegistration registration;
  std::optional<integration::IntegrationResult> integration;
};

std::vector<RegisteredSubject> registerAll(const std::vector<synth::Subject>& subjects, const config::RunConfig& cfg,
                                           bool integrate) {
  std::vector<RegisteredSubject> out(subjects.size());
  parallelFor(subjects.size(), cfg.workers, [&](std::size_t i) {
    out[i].registration = pipeline::registerSubject(subjects[i].bag, cfg.registration, cfg.policy);
    if (integrate && out[i].registration.success)
      out[i].integration = integration::integrateSubject(subjects[i].bag, out[i].registration.stageOne,
                                                         out[i].registration.stageTwo, cfg.policy);
  });
  return out;
}

void writeRegistration(const fs::path& out, const synth::Subject& s, const pipeline::SubjectRegistration& r) {
  writeJson(out / "registration" / (s.id + ".json"), manifest::registrationManifest(s.bag, r));
}

void writeIntegration(const fs::path& out, const synth::Subject& s, const integration::IntegrationResult& r) {
  const fs::path dir = out / "integration" / s.id;
  fs::create_directories(dir);
  std::vector<std::string> files;
  for (std::size_t v = 0; v < r.labels.size(); ++v) {
    const std::string stem = "view" + std::to_string(v);
    io::saveTensor(r.labels[v].softMap, dir / (stem + ".soft.grit"));
    io::writeTensor(io::toTensor(r.labels[v].hardLabel), dir / (stem + ".hard.grit"));
    files.push_back(s.id + "/" + stem + ".soft.grit");
    files.push_back(s.id + "/" + stem + ".hard.grit");
  }
  writeJson(out / "integration" / (s.id + ".json"), manifest::integrationManifest(s.bag, r, files));
}

void writeExclusions(const fs::path& out, const std::vector<synth::Subject>& subjects,
                     const std::vector<pipeline::SubjectRegistration>& regs) {
  json ex = json::array();
  for (std::size_t i = 0; i < subjects.size(); ++i)
    if (!regs[i].success) ex.push_back({{"subject", subjects[i].id}, {"reason", regs[i].failure}});
  writeJson(out / "exclusions.json", {{"excluded", ex}, {"total", subjects.size()}});
}

void writeReports(const fs::path& out, const pipeline::PipelineResult& r) {
  writeText(out / "report_by_method.csv", manifest::reportCsv(r.byMethod));
  writeText(out / "report_by_method_domain.csv", manifest::reportCsv(r.byMethodDomain));
  auto score = [](const pipeline::MethodScore& m) {
    return json{{"meanDiceAV", m.meanAV},
                {"diceA", m.dice[classId(CavfClass::Artery)]},
                {"diceV", m.dice[classId(CavfClass::Vein)]},
                {"diceF", m.dice[classId(CavfClass::Faz)]},
                {"views", m.views}};
  };
  writeJson(out / "report.json", {{"byMethod", manifest::toJson(r.byMethod)},
                                   {"byMethodDomain", manifest::toJson(r.byMethodDomain)},
                                   {"summary",
                                    {{"integrated", score(r.integrated)},
                                     {"source", score(r.source)},
                                     {"adapted", score(r.adapted)},
                                     {"adaptedMinusSourceAV", r.adapted.meanAV - r.source.meanAV},
                                     {"discFazFalsePositives", r.discFazFalsePositives}}}});
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int cmdSynth(const Options& o) {
  const auto cfg = loadRunConfig(o);
  const fs::path out(o.out);
  for (const auto& s : pipeline::synthesizeSubjects(cfg)) writeSubject(out, s);
  writeJson(out / "config.json", config::toJson(cfg));
  std::cout << "wrote " << cfg.subjects << " subjects to " << (out / "subjects").string() << "\n";
  return 0;
}

int cmdRegister(const Options& o, bool integrate) {
  const auto cfg = loadRunConfig(o);
  const fs::path out(o.out);
  const auto subjects = loadOrSynthesize(o, cfg);
  const auto results = registerAll(subjects, cfg, integrate);
  std::vector<pipeline::SubjectRegistration> regs;
  std::size_t ok = 0;
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    writeRegistration(out, subjects[i], results[i].registration);
    if (results[i].integration) writeIntegration(out, subjects[i], *results[i].integration);
    regs.push_back(results[i].registration);
    ok += results[i].registration.success;
  }
  writeExclusions(out, subjects, regs);
  std::cout << ok << "/" << subjects.size() << " subjects registered\n";
  if (ok == 0) throw RegistrationStageError("no subject registered");
  return 0;
}

TinyModel sourceModel(const Options& o, const config::RunConfig& cfg) {
  return o.modelPath.empty() ? pipeline::trainSourceModel(cfg) : loadModel(o.modelPath);
}

int cmdPseudolabel(const Options& o) {
  const auto cfg = loadRunConfig(o);
  const fs::path out(o.out);
  const auto teacher = sourceModel(o, cfg);
  std::size_t written = 0;
  for (const auto& s : loadOrSynthesize(o, cfg)) {
    for (std::size_t v = 0; v < s.bag.views.size(); ++v) {
      if (s.inputs[v].empty()) continue;
      const auto probs = teacher.forward(s.inputs[v]);
      const auto label = adaptation::generatePseudoLabel(probs, s.bag.views[v].kind, cfg.adaptation.thresholds);
      const fs::path p = out / "pseudolabels" / s.id / ("view" + std::to_string(v) + ".grit");
      fs::create_directories(p.parent_path());
      io::writeTensor(io::toTensor(label), p);
      ++written;
    }
  }
  std::cout << "wrote " << written << " pseudo-labels\n";
  return 0;
}

int cmdPipeline(const Options& o, bool fullArtifacts) {
  const auto cfg = loadRunConfig(o);
  const fs::path out(o.out);
  auto subjects = loadOrSynthesize(o, cfg);
  for (const auto& s : subjects)
    for (std::size_t v = 0; v < s.bag.views.size(); ++v)
      if (pipeline::isOcta(s.bag.views[v].kind) && (s.inputs[v].empty() || s.viewTruth[v].pixelCount() == 0))
        throw ConfigError("subject " + s.id + " view " + std::to_string(v) + " lacks an input image or truth");
  if (fullArtifacts && o.importDir.empty())
    for (const auto& s : subjects) writeSubject(out, s);
  std::optional<TinyModel> source;
  if (!o.modelPath.empty()) source = loadModel(o.modelPath);
  pipeline::PipelineResult r;
  try {
    r = pipeline::runPipelineOn(std::move(subjects), cfg, source);
  } catch (const AdaptationError&) {
    throw;
  } catch (const ArgumentError& e) {
    throw AdaptationError(e.what());
  }
  writeJson(out / "config.json", config::toJson(cfg));
  std::vector<synth::Subject> subs;
  std::vector<pipeline::SubjectRegistration> regs;
  for (const auto& run : r.subjects) {
    if (fullArtifacts) {
      writeRegistration(out, run.subject, run.registration);
      if (run.integration) writeIntegration(out, run.subject, *run.integration);
    }
    subs.push_back(run.subject);
    regs.push_back(run.registration);
  }
  writeExclusions(out, subs, regs);
  saveModel(r.sourceModel, out / "models" / "source.grit");
  saveModel(r.adaptedModel, out / "models" / "adapted.grit");
  saveModel(r.teacherModel, out / "models" / "teacher.grit");
  writeText(out / "training_log.csv", manifest::trainingLogCsv(r.log));
  writeReports(out, r);
  std::cout << "held-out mean A/V Dice: integrated " << r.integrated.meanAV << ", source " << r.source.meanAV
            << ", adapted " << r.adapted.meanAV << "; excluded " << r.excluded.size() << "\n";
  return 0;
}

int cmdEvaluate(const Options& o) {
  const auto cfg = loadRunConfig(o);
  if (o.modelPath.empty()) throw ConfigError("evaluate needs --model");
  const fs::path out(o.out);
  const auto model = loadModel(o.modelPath);
  std::optional<TinyModel> baseline;
  if (!o.baselinePath.empty()) baseline = loadModel(o.baselinePath);
  std::vector<metrics::ImageRecord> records;
  for (const auto& s : loadOrSynthesize(o, cfg))
    for (std::size_t v = 0; v < s.bag.views.size(); ++v) {
      const auto& view = s.bag.views[v];
      if (!pipeline::isOcta(view.kind) || s.inputs[v].empty() || s.viewTruth[v].pixelCount() == 0) continue;
      const std::string kind(toString(view.kind));
      records.push_back(pipeline::evaluateView(argmaxLabels(model.forward(s.inputs[v])), s.viewTruth[v], view.kind,
                                               {{"method", "model"}, {"domain", view.domain}, {"kind", kind}}));
      if (baseline)
        records.push_back(pipeline::evaluateView(argmaxLabels(baseline->forward(s.inputs[v])), s.viewTruth[v],
                                                 view.kind,
                                                 {{"method", "baseline"}, {"domain", view.domain}, {"kind", kind}}));
    }
  if (records.empty()) throw ConfigError("no view with an input image and truth to evaluate");
  const auto byMethod = metrics::aggregate(records, {"method"});
  const auto byDomain = metrics::aggregate(records, {"method", "domain"});
  json j{{"byMethod", manifest::toJson(byMethod)}, {"byMethodDomain", manifest::toJson(byDomain)}};
  if (baseline) {
    std::vector<metrics::ImageRecord> m, b;
    for (auto r : records) {
      const bool isModel = r.keys["method"] == "model";
      r.keys.erase("method");
      (isModel ? m : b).push_back(std::move(r));
    }
    metrics::EvalReport delta{{"domain"}, metrics::improvement(metrics::aggregate(m, {"domain"}),
                                                               metrics::aggregate(b, {"domain"}))};
    j["improvementVsBaseline"] = manifest::toJson(delta);
  }
  writeJson(out / "evaluation.json", j);
  writeText(out / "evaluation.csv", manifest::reportCsv(byDomain));
  std::cout << "evaluated " << records.size() << " view predictions\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-view grounding, integration and adaptation on class-probability maps"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.configPath, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Master seed (overrides the config)");
    sub->add_option("--out", o.out, "Output directory");
    sub->add_option("--subjects", o.subjects, "Number of synthetic subjects (overrides the config)");
    sub->add_option("--import", o.importDir, "Read subjects from DIR/subjects instead of synthesizing");
  };
  auto* synthCmd = app.add_subcommand("synth", "Generate synthetic subjects");
  auto* registerCmd = app.add_subcommand("register", "Two-stage registration; writes registration manifests");
  auto* integrateCmd = app.add_subcommand("integrate", "Register and integrate; writes integrated labels");
  auto* pseudoCmd = app.add_subcommand("pseudolabel", "Teacher pseudo-labels for every view with an input image");
  auto* adaptCmd = app.add_subcommand("adapt", "Source model, integration and adaptation; writes checkpoints and log");
  auto* evalCmd = app.add_subcommand("evaluate", "Evaluate a checkpoint against view truth");
  auto* pipeCmd = app.add_subcommand("pipeline", "Run every stage and write all artifacts");
  for (auto* c : {synthCmd, registerCmd, integrateCmd, pseudoCmd, adaptCmd, evalCmd, pipeCmd}) common(c);
  for (auto* c : {pseudoCmd, adaptCmd, evalCmd, pipeCmd})
    c->add_option("--model", o.modelPath, "Model checkpoint (GRIT) used as source/teacher")->check(CLI::ExistingFile);
  evalCmd->add_option("--baseline", o.baselinePath, "Baseline checkpoint for improvement deltas")
      ->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*synthCmd) return cmdSynth(o);
    if (*registerCmd) return cmdRegister(o, false);
    if (*integrateCmd) return cmdRegister(o, true);
    if (*pseudoCmd) return cmdPseudolabel(o);
    if (*adaptCmd) return cmdPipeline(o, false);
    if (*evalCmd) return cmdEvaluate(o);
    if (*pipeCmd) return cmdPipeline(o, true);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const RegistrationStageError& e) {
    std::cerr << "registration failure: " << e.what() << "\n";
    return kExitRegistration;
  } catch (const registration::RegistrationError& e) {
    std::cerr << "registration failure: " << e.what() << "\n";
    return kExitRegistration;
  } catch (const registration::ExhaustedAnchorsError& e) {
    std::cerr << "registration failure: " << e.what() << "\n";
    return kExitRegistration;
  } catch (const AdaptationError& e) {
    std::cerr << "adaptation failure: " << e.what() << "\n";
    return kExitAdaptation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
