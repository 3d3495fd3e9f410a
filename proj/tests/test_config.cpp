#include <gtest/gtest.h>

#include <fstream>

#include "support.hpp"

using namespace orbitfed;

namespace {

json minimal() { return {{"clusters", json::array({{{"id", 0}, {"clients", 2}}, {{"id", 1}, {"clients", 3}}})}}; }

std::vector<std::string> problems_of(const json& j) {
  try {
    parse_scenario_config(j);
  } catch (const ValidationError& e) {
    return e.problems();
  }
  return {};
}

bool mentions(const std::vector<std::string>& ps, const std::string& needle) {
  return std::any_of(ps.begin(), ps.end(), [&](const std::string& p) { return p.find(needle) != std::string::npos; });
}

std::string source(const std::string& rel) { return std::string(ORBITFED_SOURCE_DIR) + "/" + rel; }

}  // namespace

TEST(Config, MinimalScenarioParses) {
  const auto cfg = parse_scenario_config(minimal());
  EXPECT_EQ(cfg.scenario.clients.size(), 5u);
  EXPECT_EQ(cfg.scenario.clusters.size(), 2u);
  EXPECT_EQ(cfg.scenario.clusters[1].client_ids.size(), 3u);
  EXPECT_EQ(cfg.scenario.train, nullptr);
}

TEST(Config, UnknownKeysAreReportedWithTheirPath) {
  auto j = minimal();
  j["colour"] = "red";
  j["clusters"][1]["bandwith_hz"] = 1e6;
  const auto ps = problems_of(j);
  EXPECT_TRUE(mentions(ps, "colour"));
  EXPECT_TRUE(mentions(ps, "bandwith_hz"));
  EXPECT_GE(ps.size(), 2u);
}

TEST(Config, WrongTypesAreReported) {
  auto j = minimal();
  j["clusters"][0]["bandwidth_hz"] = "wide";
  EXPECT_FALSE(problems_of(j).empty());
}

TEST(Config, DataWithoutLayoutIsRejected) {
  auto j = minimal();
  j["data"] = {{"source", "synthetic"}};
  EXPECT_THROW(parse_scenario_config(j), ValidationError);
}

TEST(Config, InfiniteOffloadBoundRoundTrips) {
  auto j = minimal();
  j["clusters"][0]["max_offload_samples"] = nullptr;
  j["clusters"][1]["max_offload_samples"] = 300.0;
  const auto cfg = parse_scenario_config(j);
  EXPECT_TRUE(std::isinf(cfg.scenario.clusters[0].max_offload_samples));
  EXPECT_EQ(cfg.scenario.clusters[1].max_offload_samples, 300.0);
  const auto d = describe(cfg);
  EXPECT_TRUE(d["clusters"][0]["max_offload_samples"].is_null());
  EXPECT_EQ(d["clusters"][1]["max_offload_samples"].get<double>(), 300.0);
}

TEST(Config, ReferenceScenario) {
  const auto cfg = reference_config();
  const auto& s = cfg.scenario;
  ASSERT_EQ(s.clients.size(), 50u);
  ASSERT_EQ(s.clusters.size(), 5u);
  EXPECT_EQ(s.footprint.param_count, 20u * 32 + 32 + 32 * 10 + 10);
  int sun = 0;
  for (const auto& c : s.clusters) sun += c.sun_facing;
  EXPECT_EQ(sun, 3);
  for (const auto& c : s.clients) EXPECT_EQ(c.dataset_size, 1200u);
  ASSERT_NE(s.train, nullptr);
  EXPECT_EQ(s.train->size(), 60000u);
  EXPECT_EQ(s.test->size(), 2000u);
  EXPECT_EQ(s.clients.front().cpu_freq_hz, 1e8);
  EXPECT_EQ(s.clients.back().cpu_freq_hz, 3e8);
}

TEST(Config, ShippedReferenceMatchesBuiltin) {
  std::ifstream in(source("scenarios/reference.json"));
  ASSERT_TRUE(in);
  EXPECT_EQ(json::parse(in), reference_scenario_json());
}

TEST(Config, CoverageFileResolvesRelativeToScenario) {
  const auto cfg = load_scenario_config(source("scenarios/varying_coverage.json"));
  bool varying = false;
  for (const auto& c : cfg.scenario.clusters)
    if (!c.coverage.is_fixed()) {
      varying = true;
      EXPECT_DOUBLE_EQ(c.coverage.mean(), 408.0);
    }
  EXPECT_TRUE(varying);
  EXPECT_EQ(cfg.source, source("scenarios/varying_coverage.json"));
}

TEST(Config, FileErrors) {
  EXPECT_THROW(load_scenario_config(source("scenarios/absent.json")), FormatError);
  const auto path = std::filesystem::temp_directory_path() / "orbitfed_bad.json";
  {
    std::ofstream out(path);
    out << "{ \"clusters\": [ }";
  }
  EXPECT_THROW(load_scenario_config(path.string()), FormatError);
  std::filesystem::remove(path);
}

TEST(Config, DescribeListsEveryClient) {
  const auto cfg = parse_scenario_config(minimal());
  const auto d = describe(cfg);
  EXPECT_EQ(d["clusters"].size(), 2u);
  EXPECT_EQ(d["clients"].size(), 5u);
  EXPECT_EQ(d["clusters"][1]["clients"].size(), 3u);
}
