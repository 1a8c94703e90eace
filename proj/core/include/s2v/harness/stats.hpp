#pragma once

#include "s2v/harness/pipeline.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace s2v::harness {

struct ErrorStats {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  double median = 0.0;
  double min = 0.0;
  double max = 0.0;
};

struct MethodStats {
  Method method = Method::kLoftrDwp;
  int count = 0;
  int failures = 0;
  ErrorStats rotation_deg;
  ErrorStats translation_mm;
  double pct_success_15 = 0.0;  // rotation AND translation below the loose threshold
  double pct_success_5 = 0.0;
};

struct StatsSummary {
  SuccessThreshold loose = kInitThreshold;
  SuccessThreshold strict = kNavigationThreshold;
  std::vector<MethodStats> methods;  // fixed method order, only methods present in the records

  const MethodStats& at(Method m) const;
};

/// Mean, population std and midpoint median. Throws ValidationError on an empty input.
ErrorStats summarize(std::span<const double> values);

/// Success flags are recomputed from the errors with the given thresholds.
StatsSummary aggregate(std::span<const CaseRecord> records, SuccessThreshold loose = kInitThreshold,
                       SuccessThreshold strict = kNavigationThreshold);

nlohmann::json stats_json(const StatsSummary& s);
/// One row per table line, one column per method.
std::string stats_csv(const StatsSummary& s);
/// Markdown table: mean +- std with the median in parentheses, then the two success rows.
std::string stats_table(const StatsSummary& s);

/// Writes stats.json, stats.csv and table.md into dir.
void write_stats(const std::filesystem::path& dir, const StatsSummary& s);

}  // namespace s2v::harness
