#pragma once

// JSON manifests and CSV reports written by the command-line tool.

#include <bit>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "grinadapt/adaptation.hpp"
#include "grinadapt/geometry.hpp"
#include "grinadapt/integration.hpp"
#include "grinadapt/metrics.hpp"
#include "grinadapt/pipeline.hpp"
#include "grinadapt/registration.hpp"

namespace grinadapt::manifest {

using json = nlohmann::json;

/// 9 little-endian float64 values, row-major, as lowercase hex (144 characters).
inline std::string homographyHex(const geometry::Homography& h) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out;
  for (double v : h.rowMajor()) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) {
      const auto byte = static_cast<unsigned>((bits >> (8 * i)) & 0xFFu);
      out.push_back(digits[byte >> 4]);
      out.push_back(digits[byte & 0xF]);
    }
  }
  return out;
}

inline geometry::Homography homographyFromHex(const std::string& hex) {
  if (hex.size() != 144) throw FormatError("homography hex must hold 72 bytes");
  if (hex.find_first_not_of("0123456789abcdefABCDEF") != std::string::npos)
    throw FormatError("homography hex has a non-hex character");
  std::array<double, 9> m{};
  for (std::size_t k = 0; k < 9; ++k) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) {
      const auto byte = std::stoul(hex.substr(k * 16 + i * 2, 2), nullptr, 16);
      bits |= std::uint64_t(byte) << (8 * i);
    }
    m[k] = std::bit_cast<double>(bits);
  }
  return geometry::Homography(m);
}

inline json toJson(const geometry::DecomposedTransform& d) {
  return {{"tx", d.tx}, {"ty", d.ty}, {"sx", d.sx}, {"sy", d.sy}, {"theta", d.theta},
          {"shear", d.shear}, {"perspective", d.perspective}};
}

inline json toJson(const registration::BagRegistration& r, std::span<const std::size_t> bagViews) {
  auto bagIndex = [&](std::size_t v) -> json { return v < bagViews.size() ? json(bagViews[v]) : json(nullptr); };
  json views = json::array();
  views.push_back({{"view", r.anchorIndex},
                   {"bagView", bagIndex(r.anchorIndex)},
                   {"anchor", true},
                   {"homography", geometry::Homography::identity().rowMajor()},
                   {"homographyLE64", homographyHex(geometry::Homography::identity())},
                   {"valid", true}});
  for (const auto& o : r.outcomes) {
    json v{{"view", o.view}, {"bagView", bagIndex(o.view)}, {"anchor", false}, {"valid", o.valid()}};
    if (o.outcome) {
      v["homography"] = o.outcome->homography.rowMajor();
      v["homographyLE64"] = homographyHex(o.outcome->homography);
      v["decomposition"] = toJson(o.outcome->decomposition);
      json viol = json::array();
      for (auto c : o.outcome->validation.violations) viol.push_back(std::string(geometry::toString(c)));
      v["violations"] = viol;
      v["inlierCount"] = o.outcome->inlierCount;
      v["inlierRatio"] = o.outcome->inlierRatio;
    } else {
      v["failure"] = o.failure;
    }
    views.push_back(std::move(v));
  }
  json trials = json::array();
  for (const auto& t : r.trials)
    trials.push_back({{"anchor", t.anchor},
                      {"success", t.success},
                      {"clusterDistance", std::isfinite(t.clusterDistance) ? json(t.clusterDistance) : json(nullptr)}});
  return {{"success", r.success},
          {"anchorIndex", r.anchorIndex},
          {"viewCount", r.viewCount},
          {"trialCount", r.trials.size()},
          {"usedAnchors", r.usedAnchors},
          {"clusterDistance", std::isfinite(r.clusterDistance) ? json(r.clusterDistance) : json(nullptr)},
          {"trials", trials},
          {"views", views}};
}

/// Per-subject registration manifest; stage-two view 0 is the macula composite.
inline json registrationManifest(const integration::SubjectBag& bag, const pipeline::SubjectRegistration& r) {
  const auto plan = integration::planStages(bag);
  std::vector<std::size_t> stageTwo{std::numeric_limits<std::size_t>::max()};
  stageTwo.insert(stageTwo.end(), plan.stageTwo.begin(), plan.stageTwo.end());
  json views = json::array();
  for (std::size_t i = 0; i < bag.views.size(); ++i)
    views.push_back({{"index", i}, {"domain", bag.views[i].domain}, {"kind", std::string(toString(bag.views[i].kind))}});
  json j{{"subject", bag.subjectId}, {"success", r.success}, {"views", views}};
  if (!r.failure.empty()) j["failure"] = r.failure;
  if (r.stageOne.viewCount > 0) j["stageOne"] = toJson(r.stageOne, plan.stageOne);
  if (r.stageTwo.viewCount > 0) {
    j["stageTwo"] = toJson(r.stageTwo, stageTwo);
    for (auto& v : j["stageTwo"]["views"])
      if (v["view"] == 0) v["bagView"] = "maculaComposite";
  }
  return j;
}

inline json integrationManifest(const integration::SubjectBag& bag, const integration::IntegrationResult& r,
                                const std::vector<std::string>& files = {}) {
  json regions = json::array();
  for (const auto& u : r.regions)
    regions.push_back({{"region", std::string(integration::toString(u.region))},
                       {"views", u.views},
                       {"fallback", u.fallback},
                       {"note", u.note}});
  json j{{"subject", bag.subjectId}, {"regions", regions}};
  if (r.partition.discCenter) {
    j["discCenter"] = {r.partition.discCenter->x, r.partition.discCenter->y};
    j["discRadius"] = r.partition.discRadius;
  } else {
    j["discCenter"] = nullptr;
  }
  if (!files.empty()) j["files"] = files;
  return j;
}

inline std::string formatNumber(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline std::string trainingLogCsv(const std::vector<adaptation::LogRow>& rows) {
  std::ostringstream out;
  out << "epoch,step,lambda,segLoss,confLoss,adaptLoss,heldoutDiceA,heldoutDiceV,heldoutDiceF\n";
  for (const auto& r : rows)
    out << r.epoch << ',' << r.step << ',' << formatNumber(r.lambda) << ',' << formatNumber(r.segLoss) << ','
        << formatNumber(r.confLoss) << ',' << formatNumber(r.adaptLoss) << ',' << formatNumber(r.heldoutDiceA) << ','
        << formatNumber(r.heldoutDiceV) << ',' << formatNumber(r.heldoutDiceF) << '\n';
  return out.str();
}

inline json toJson(const metrics::EvalReport& rep) {
  json groups = json::array();
  for (const auto& g : rep.groups) {
    json stats = json::object();
    for (const auto& [m, s] : g.stats)
      stats[m] = {{"mean", s.mean}, {"std", s.stddev}, {"count", s.count}, {"missing", s.missing}};
    groups.push_back({{"keys", g.keys}, {"stats", stats}});
  }
  return {{"groupBy", rep.groupBy}, {"groups", groups}};
}

/// One row per (group, metric).
inline std::string reportCsv(const metrics::EvalReport& rep) {
  std::ostringstream out;
  for (const auto& k : rep.groupBy) out << k << ',';
  out << "metric,mean,std,count,missing\n";
  for (const auto& g : rep.groups)
    for (const auto& [m, s] : g.stats) {
      for (const auto& k : rep.groupBy) out << g.keys.at(k) << ',';
      out << m << ',' << formatNumber(s.mean) << ',' << formatNumber(s.stddev) << ',' << s.count << ',' << s.missing
          << '\n';
    }
  return out.str();
}

}  // namespace grinadapt::manifest
