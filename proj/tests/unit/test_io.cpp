#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "grinadapt/config.hpp"
#include "grinadapt/manifest.hpp"
#include "grinadapt/parallel.hpp"
#include "grinadapt/tensor_io.hpp"

using namespace grinadapt;
namespace fs = std::filesystem;

namespace {

fs::path tempDir(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("grinadapt_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string readBytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

ProbabilityMap floatMap(std::size_t h, std::size_t w, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  ProbabilityMap m(h, w, kNumClasses);
  for (double& v : m.values()) v = u(rng);
  return m;
}

}  // namespace

TEST(Tensor, HeaderLayout) {
  const io::Tensor t{{2, 3}, {1, 2, 3, 4, 5, 6}};
  const auto b = io::encodeTensor(t);
  ASSERT_EQ(b.size(), 4u + 4 + 4 + 8 + 24);
  EXPECT_EQ(b.substr(0, 4), "GRIT");
  EXPECT_EQ(b[4], 1);  // version, little-endian
  EXPECT_EQ(b[8], 2);  // ndim
  EXPECT_EQ(b[12], 2);
  EXPECT_EQ(b[16], 3);
  float first;
  std::memcpy(&first, b.data() + 20, 4);
  EXPECT_EQ(first, 1.0f);
  EXPECT_EQ(io::decodeTensor(b), t);
}

TEST(Tensor, SaveLoadRoundTripIsBitwise) {
  std::mt19937_64 rng(1);
  const auto dir = tempDir("roundtrip");
  const auto m = floatMap(7, 9, rng);
  io::saveTensor(m, dir / "a.grit");
  const auto back = io::loadTensor(dir / "a.grit");
  EXPECT_EQ(back, m);
  io::saveTensor(back, dir / "b.grit");
  EXPECT_EQ(readBytes(dir / "a.grit"), readBytes(dir / "b.grit"));
}

TEST(Tensor, WrongMagicIsFormatError) {
  auto b = io::encodeTensor({{1}, {0.5f}});
  b[0] = 'X';
  EXPECT_THROW(io::decodeTensor(b), FormatError);
}

TEST(Tensor, TruncatedPayloadIsFormatError) {
  const auto b = io::encodeTensor({{2, 2}, {1, 2, 3, 4}});
  EXPECT_THROW(io::decodeTensor(b.substr(0, b.size() - 1)), FormatError);
  EXPECT_THROW(io::decodeTensor(b.substr(0, 10)), FormatError);
  EXPECT_THROW(io::decodeTensor(b + "x"), FormatError);
  auto v = b;
  v[4] = 2;
  EXPECT_THROW(io::decodeTensor(v), FormatError);
}

TEST(Tensor, MissingFileIsFormatError) {
  EXPECT_THROW(io::readTensor("/nonexistent/path.grit"), FormatError);
}

TEST(Tensor, LabelsAndModelRoundTrip) {
  std::mt19937_64 rng(2);
  LabelMap l(5, 6);
  for (auto& v : l.values()) v = std::uint8_t(rng() % 5);
  EXPECT_EQ(io::labelsFromTensor(io::toTensor(l)), l);
  auto m = TinyModel::random(2, 5, 5, 3, 0.1);
  for (double& p : m.parameters()) p = double(float(p));
  const auto t = io::toTensor(m);
  EXPECT_EQ(t.dims, (std::vector<std::uint32_t>{5, 2 * 25 + 1}));
  EXPECT_EQ(io::modelFromTensor(t, 2), m);
  EXPECT_THROW(io::modelFromTensor(t, 3), FormatError);
}

TEST(Config, DefaultsMatchConstants) {
  const config::RunConfig c;
  EXPECT_EQ(c.adaptation.schedule.lambdaMin, 0.1);
  EXPECT_EQ(c.adaptation.schedule.lambdaMax, 0.9);
  EXPECT_EQ(c.adaptation.schedule.epochs, 3.0);
  EXPECT_EQ(c.adaptation.schedule.emaAlpha, 0.995);
  EXPECT_EQ(c.adaptation.schedule.ceWeight, 1.0);
  EXPECT_EQ(c.adaptation.optimizer.learningRate, 8e-5);
  EXPECT_EQ(c.adaptation.augment.teacherSigma, 0.01);
  EXPECT_EQ(c.adaptation.augment.studentSigmas, (std::vector<double>{0.2, 0.1}));
  EXPECT_EQ(c.adaptation.augment.contrastFactor, 0.2);
  EXPECT_EQ(c.adaptation.thresholds.fazBands.size(), 3u);
  EXPECT_EQ(c.registration.pair.ransac.thresholds.scaleMax, 2.0);
  EXPECT_EQ(c.trainFraction, 0.6);
  EXPECT_EQ(c.subjects, 30u);
}

TEST(Config, JsonRoundTrip) {
  config::RunConfig c;
  c.seed = 99;
  c.adaptation.thresholds.tauConf = 0.7;
  c.synth.views[1].corruption.level = 1.5;
  const auto j = config::toJson(c);
  const auto back = config::fromJson(j);
  EXPECT_EQ(config::toJson(back), j);
  EXPECT_EQ(back.seed, 99u);
  EXPECT_TRUE(std::isinf(back.adaptation.thresholds.fazBands.back().upperFraction));
}

TEST(Config, PartialDocumentKeepsDefaults) {
  const auto c = config::fromJson(nlohmann::json::parse(R"({"seed": 5, "schedule": {"emaAlpha": 0.99}})"));
  EXPECT_EQ(c.seed, 5u);
  EXPECT_EQ(c.adaptation.schedule.emaAlpha, 0.99);
  EXPECT_EQ(c.adaptation.schedule.lambdaMin, 0.1);
}

TEST(Config, UnknownKeysRejected) {
  EXPECT_THROW(config::fromJson(nlohmann::json::parse(R"({"sed": 5})")), ConfigError);
  EXPECT_THROW(config::fromJson(nlohmann::json::parse(R"({"schedule": {"alpha": 0.9}})")), ConfigError);
  EXPECT_THROW(config::fromJson(nlohmann::json::parse(R"({"synth": {"views": [{"kind": "macula6", "x": 1}]}})")),
               ConfigError);
}

TEST(Config, InvalidValuesRejected) {
  EXPECT_THROW(config::fromJson(nlohmann::json::parse(R"({"seed": "abc"})")), ConfigError);
  EXPECT_THROW(config::fromJson(nlohmann::json::parse(R"({"schedule": {"emaAlpha": 1.5}})")), ConfigError);
  EXPECT_THROW(config::fromJson(nlohmann::json::parse(R"({"subjects": 1})")), ConfigError);
  EXPECT_THROW(config::fromJson(nlohmann::json::parse(R"({"synth": {"views": [{"kind": "retina"}]}})")),
               ConfigError);
  const auto dir = tempDir("cfg");
  std::ofstream(dir / "bad.json") << "{ not json";
  EXPECT_THROW(config::loadConfig(dir / "bad.json"), ConfigError);
  EXPECT_THROW(config::loadConfig(dir / "missing.json"), ConfigError);
}

TEST(Manifest, HomographyHexRoundTrip) {
  const auto h = geometry::Homography({1.01, -0.02, 3.5, 0.03, 0.99, -7.25, 1e-6, -2e-6, 1});
  const auto hex = manifest::homographyHex(h);
  EXPECT_EQ(hex.size(), 144u);
  EXPECT_EQ(hex.substr(128), "000000000000f03f");  // 1.0 little-endian
  EXPECT_EQ(manifest::homographyFromHex(hex).rowMajor(), h.rowMajor());
  EXPECT_THROW(manifest::homographyFromHex("00"), FormatError);
  EXPECT_THROW(manifest::homographyFromHex(std::string(144, 'z')), FormatError);
}

TEST(Manifest, TrainingLogCsv) {
  std::vector<adaptation::LogRow> rows{{0, 0, 0.1, 0, 0, 0, 50, 40, 30}, {1, 10, 0.3, 0.5, 0.25, 0.425, 60, 55, 35}};
  const auto csv = manifest::trainingLogCsv(rows);
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "epoch,step,lambda,segLoss,confLoss,adaptLoss,heldoutDiceA,heldoutDiceV,heldoutDiceF");
  EXPECT_NE(csv.find("1,10,0.300000,0.500000,0.250000,0.425000,60.000000,55.000000,35.000000"), std::string::npos);
}

TEST(Parallel, CoversEveryIndexAndRethrows) {
  std::vector<int> hits(100, 0);
  parallelFor(100, 4, [&](std::size_t i) { hits[i] += 1; });
  for (int h : hits) EXPECT_EQ(h, 1);
  EXPECT_THROW(parallelFor(10, 3,
                           [](std::size_t i) {
                             if (i == 7) throw ArgumentError("boom");
                           }),
               ArgumentError);
}

TEST(Parallel, WorkerCountHonoursEnvironment) {
  setenv("GRIN_WORKERS", "1", 1);
  EXPECT_EQ(workerCount(), 1u);
  setenv("GRIN_WORKERS", "junk", 1);
  EXPECT_GE(workerCount(), 1u);
  unsetenv("GRIN_WORKERS");
}
