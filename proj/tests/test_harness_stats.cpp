#include "s2v/harness/distribution.hpp"
#include "s2v/harness/stats.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

namespace s2v::harness {
namespace {

CaseRecord rec(int id, Method m, double deg, double mm, bool failed = false) {
  CaseRecord r;
  r.case_id = id;
  r.method = m;
  r.error = failed ? kFailureError : PoseError{deg, mm, false, false};
  r.failed = failed;
  return r;
}

TEST(Summarize, SingleValue) {
  const std::vector<double> v{3.25};
  const ErrorStats s = summarize(v);
  EXPECT_EQ(s.mean, 3.25);
  EXPECT_EQ(s.median, 3.25);
  EXPECT_EQ(s.std, 0.0);
}

TEST(Summarize, PopulationStdAndMidpointMedian) {
  const std::vector<double> v{1, 2, 3, 10};
  const ErrorStats s = summarize(v);
  EXPECT_DOUBLE_EQ(s.mean, 4.0);
  EXPECT_DOUBLE_EQ(s.median, 2.5);
  EXPECT_DOUBLE_EQ(s.std, std::sqrt((9 + 4 + 1 + 36) / 4.0));
  EXPECT_EQ(s.min, 1.0);
  EXPECT_EQ(s.max, 10.0);
  EXPECT_THROW(summarize(std::vector<double>{}), ValidationError);
}

TEST(Aggregate, SingleRecord) {
  const std::vector<CaseRecord> r{rec(0, Method::kLoftrDwp, 7.0, 2.0)};
  const StatsSummary s = aggregate(r);
  const MethodStats& m = s.at(Method::kLoftrDwp);
  EXPECT_EQ(m.count, 1);
  EXPECT_EQ(m.rotation_deg.mean, 7.0);
  EXPECT_EQ(m.rotation_deg.median, 7.0);
  EXPECT_EQ(m.rotation_deg.std, 0.0);
  EXPECT_EQ(m.pct_success_15, 100.0);
  EXPECT_EQ(m.pct_success_5, 0.0);
}

TEST(Aggregate, JointThresholdEnumeration) {
  const std::vector<CaseRecord> r{rec(0, Method::kLoftrDwp, 4, 4), rec(1, Method::kLoftrDwp, 10, 10),
                                  rec(2, Method::kLoftrDwp, 20, 20)};
  const StatsSummary s = aggregate(r);
  const MethodStats& m = s.at(Method::kLoftrDwp);
  EXPECT_NEAR(m.pct_success_15, 200.0 / 3.0, 1e-12);
  EXPECT_NEAR(m.pct_success_5, 100.0 / 3.0, 1e-12);
  EXPECT_NEAR(std::round(m.pct_success_15 * 100) / 100, 66.67, 1e-12);
}

TEST(Aggregate, TranslationAloneCanFailTheJointCondition) {
  const std::vector<CaseRecord> r{rec(0, Method::kBaselineMi, 4, 20)};
  EXPECT_EQ(aggregate(r).at(Method::kBaselineMi).pct_success_15, 0.0);
}

TEST(Aggregate, PermutationInvariant) {
  Rng rng(1);
  std::vector<CaseRecord> r;
  for (int i = 0; i < 41; ++i)
    for (Method m : kAllMethods) r.push_back(rec(i, m, uniform(rng, 0, 40), uniform(rng, 0, 40), i % 17 == 3));
  const nlohmann::json base = stats_json(aggregate(r));
  for (int k = 0; k < 5; ++k) {
    std::shuffle(r.begin(), r.end(), rng);
    const StatsSummary s = aggregate(r);
    for (std::size_t i = 0; i < s.methods.size(); ++i) {
      const auto& m = s.methods[i];
      const auto& b = base["methods"][i];
      EXPECT_EQ(b["method"], method_tag(m.method));
      EXPECT_EQ(m.rotation_deg.median, b["rotation_deg"]["median"].get<double>());
      EXPECT_EQ(m.translation_mm.median, b["translation_mm"]["median"].get<double>());
      EXPECT_EQ(m.pct_success_15, b["pct_success_15"].get<double>());
      EXPECT_EQ(m.pct_success_5, b["pct_success_5"].get<double>());
    }
  }
}

TEST(Aggregate, Invariants) {
  Rng rng(2);
  std::vector<CaseRecord> r;
  for (int i = 0; i < 30; ++i) r.push_back(rec(i, Method::kLoftrRansac, uniform(rng, 0, 180), uniform(rng, 0, 60)));
  r.push_back(rec(30, Method::kLoftrRansac, 0, 0, true));
  const StatsSummary s = aggregate(r);
  const MethodStats& m = s.at(Method::kLoftrRansac);
  EXPECT_EQ(m.failures, 1);
  EXPECT_EQ(m.count, 31);
  for (const ErrorStats* e : {&m.rotation_deg, &m.translation_mm}) {
    EXPECT_GE(e->median, e->min);
    EXPECT_LE(e->median, e->max);
  }
  EXPECT_GE(m.pct_success_5, 0.0);
  EXPECT_LE(m.pct_success_15, 100.0);
  EXPECT_GE(m.pct_success_15, m.pct_success_5);
  EXPECT_EQ(m.rotation_deg.max, 180.0);  // failure sentinel
  EXPECT_THROW(aggregate(std::vector<CaseRecord>{}), ValidationError);
}

TEST(StatsOutput, TableHasTheFixedRowAndColumnStructure) {
  std::vector<CaseRecord> r;
  for (int i = 0; i < 4; ++i)
    for (Method m : kAllMethods) r.push_back(rec(i, m, 1.0 + i, 2.0 * i));
  const StatsSummary s = aggregate(r);
  const std::string table = stats_table(s);
  EXPECT_NE(table.find("| | Baseline | LoFTR-RANSAC | LoFTR-DWP | LoFTR-DWP + Baseline |"), std::string::npos);
  EXPECT_NE(table.find("| Rot. (deg) | 2.50 ± 1.12 |"), std::string::npos);
  EXPECT_NE(table.find("|  | (2.50) |"), std::string::npos);
  EXPECT_NE(table.find("| 15° & 15 mm |"), std::string::npos);
  EXPECT_NE(table.find("| 5° & 5 mm |"), std::string::npos);
  const std::string csv = stats_csv(s);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "metric,Baseline,LoFTR-RANSAC,LoFTR-DWP,LoFTR-DWP + Baseline");
  EXPECT_NE(csv.find("\npct_success_15,"), std::string::npos);
  EXPECT_EQ(stats_json(s)["std_kind"], "population");
}

TEST(Distribution, SingleRecordDensityIntegratesToOne) {
  const std::vector<double> one{12.5};
  const Density d = gaussian_kde(one);
  EXPECT_NEAR(integrate(d), 1.0, 1e-3);
  EXPECT_EQ(d.bandwidth, 1.0);
}

TEST(Distribution, DensityIntegratesToOneOnSamples) {
  Rng rng(3);
  std::vector<double> v;
  for (int i = 0; i < 200; ++i) v.push_back(std::abs(normal01(rng)) * 5.0);
  const Density d = gaussian_kde(v);
  EXPECT_NEAR(integrate(d), 1.0, 1e-3);
  for (double x : d.values) EXPECT_GE(x, 0.0);
}

TEST(Distribution, SilvermanRule) {
  const std::vector<double> v{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  double mean = 5.5, ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / 9.0);
  const double iqr = 7.75 - 3.25;  // linear-interpolated quartiles
  EXPECT_NEAR(silverman_bandwidth(v), 0.9 * std::min(sd, iqr / 1.34) * std::pow(10.0, -0.2), 1e-12);
}

TEST(Distribution, ExportWritesEveryRecordAndIsDeterministic) {
  std::vector<CaseRecord> r;
  Rng rng(4);
  for (int i = 0; i < 12; ++i)
    for (Method m : {Method::kBaselineMi, Method::kLoftrDwp}) r.push_back(rec(i, m, uniform(rng, 0, 30), uniform(rng, 0, 30), i == 5));
  const auto a = s2v::test::scratch_dir("dist_a"), b = s2v::test::scratch_dir("dist_b");
  export_distribution(r, a);
  export_distribution(r, b);
  for (const char* f : {"errors.csv", "density.json", "violin.svg"})
    EXPECT_EQ(s2v::test::slurp(a / f), s2v::test::slurp(b / f)) << f;
  const std::string csv = s2v::test::slurp(a / "errors.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 24);
  int baseline_rows = 0, pos = 0;
  while ((pos = static_cast<int>(csv.find("\nbaseline-mi,", static_cast<std::size_t>(pos) + 1))) != static_cast<int>(std::string::npos)) ++baseline_rows;
  EXPECT_EQ(baseline_rows, 12);
  const auto j = nlohmann::json::parse(s2v::test::slurp(a / "density.json"));
  ASSERT_EQ(j["methods"].size(), 2u);
  EXPECT_EQ(j["methods"][1]["method"], "loftr-dwp");
  EXPECT_EQ(j["methods"][1]["samples"].get<int>(), 11);
}

}  // namespace
}  // namespace s2v::harness
