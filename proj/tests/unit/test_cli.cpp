#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "json.hpp"

#include "grinadapt/tensor_io.hpp"
#include "grinadapt/tiny_model.hpp"

using namespace grinadapt;
namespace fs = std::filesystem;

namespace {

fs::path tempDir(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("grinadapt_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run(const std::string& args) {
  const std::string cmd = std::string("GRIN_WORKERS=1 \"") + GRINADAPT_CLI + "\" " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Two subjects of three small macula views: quick to synthesize and register.
fs::path smallConfig(const fs::path& dir) {
  const auto path = dir / "config.json";
  std::ofstream(path) << R"({"subjects": 2, "sourceSubjects": 2,
    "synth": {"views": [{"domain": "D1", "kind": "macula6"}, {"domain": "D2", "kind": "macula6"},
                        {"domain": "D3", "kind": "macula6"}]}})";
  return path;
}

void replaceWithNoise(const fs::path& root) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (const auto& e : fs::recursive_directory_iterator(root / "subjects")) {
    const auto name = e.path().filename().string();
    if (name.size() < 10 || name.substr(name.size() - 10) != ".prob.grit") continue;
    auto m = io::loadTensor(e.path());
    for (std::size_t i = 0; i < m.pixelCount(); ++i) {
      auto p = m.pixel(i);
      double s = 0.0;
      for (double& v : p) s += v = u(rng);
      for (double& v : p) v /= s;
    }
    io::saveTensor(m, e.path());
  }
}

}  // namespace

TEST(Cli, HelpAndBadArguments) {
  EXPECT_EQ(run("--help"), 0);
  EXPECT_EQ(run("synth --no-such-flag"), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("synth --config /nonexistent.json"), 2);
}

TEST(Cli, UnknownConfigKeyIsConfigError) {
  const auto dir = tempDir("badcfg");
  std::ofstream(dir / "bad.json") << R"({"schedule": {"emaAlhpa": 0.9}})";
  EXPECT_EQ(run("synth --config " + (dir / "bad.json").string() + " --out " + (dir / "out").string()), 2);
  EXPECT_FALSE(fs::exists(dir / "out" / "subjects"));
}

TEST(Cli, SynthWritesSubjects) {
  const auto dir = tempDir("synth");
  ASSERT_EQ(run("synth --config " + smallConfig(dir).string() + " --out " + (dir / "out").string()), 0);
  std::size_t count = 0;
  for (const auto& e : fs::directory_iterator(dir / "out" / "subjects")) {
    ++count;
    std::ifstream f(e.path() / "subject.json");
    const auto j = nlohmann::json::parse(f);
    ASSERT_EQ(j["views"].size(), 3u);
    const auto m = io::loadTensor(e.path() / j["views"][0]["prediction"].get<std::string>());
    EXPECT_EQ(m.height(), 256u);
    EXPECT_TRUE(m.isValidProbability(true, 1e-5));
  }
  EXPECT_EQ(count, 2u);
}

TEST(Cli, RegisterWritesManifests) {
  const auto dir = tempDir("register");
  const auto out = (dir / "out").string();
  ASSERT_EQ(run("synth --config " + smallConfig(dir).string() + " --out " + out), 0);
  ASSERT_EQ(run("register --config " + smallConfig(dir).string() + " --import " + out + " --out " + out), 0);
  std::ifstream f(fs::path(out) / "exclusions.json");
  const auto j = nlohmann::json::parse(f);
  EXPECT_EQ(j["total"], 2);
  EXPECT_TRUE(j["excluded"].empty());
  EXPECT_EQ(std::distance(fs::directory_iterator(fs::path(out) / "registration"), fs::directory_iterator{}), 2);
}

TEST(Cli, UnregistrableSubjectsGiveRegistrationExit) {
  const auto dir = tempDir("noise");
  const auto out = (dir / "out").string();
  ASSERT_EQ(run("synth --config " + smallConfig(dir).string() + " --out " + out), 0);
  replaceWithNoise(out);
  EXPECT_EQ(run("register --import " + out + " --out " + (dir / "r").string()), 3);
  EXPECT_EQ(run("integrate --import " + out + " --out " + (dir / "i").string()), 3);
}

TEST(Cli, AdaptationWithoutTrainingSubjectsGivesAdaptationExit) {
  const auto dir = tempDir("adapt");
  const auto out = (dir / "out").string();
  ASSERT_EQ(run("synth --config " + smallConfig(dir).string() + " --out " + out), 0);
  replaceWithNoise(out);
  io::writeTensor(io::toTensor(TinyModel(2, 5, kNumClasses)), dir / "zero.grit");
  EXPECT_EQ(run("adapt --import " + out + " --model " + (dir / "zero.grit").string() + " --out " +
                (dir / "a").string()),
            4);
}

TEST(Cli, EvaluateRequiresModel) {
  const auto dir = tempDir("eval");
  const auto out = (dir / "out").string();
  ASSERT_EQ(run("synth --config " + smallConfig(dir).string() + " --out " + out), 0);
  EXPECT_EQ(run("evaluate --import " + out + " --out " + out), 2);
  io::writeTensor(io::toTensor(TinyModel(2, 5, kNumClasses)), dir / "zero.grit");
  ASSERT_EQ(run("evaluate --import " + out + " --model " + (dir / "zero.grit").string() + " --baseline " +
                (dir / "zero.grit").string() + " --out " + out),
            0);
  std::ifstream f(fs::path(out) / "evaluation.json");
  const auto j = nlohmann::json::parse(f);
  EXPECT_TRUE(j.contains("improvementVsBaseline"));
}
