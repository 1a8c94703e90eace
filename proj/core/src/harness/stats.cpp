#include "s2v/harness/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace s2v::harness {

using nlohmann::json;

namespace {

std::string fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string full(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string threshold_label(const SuccessThreshold& t) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g° & %g mm", t.rotation_deg, t.translation_mm);
  return buf;
}

json error_json(const ErrorStats& e) {
  return {{"mean", e.mean}, {"std", e.std}, {"median", e.median}, {"min", e.min}, {"max", e.max}};
}

}  // namespace

const MethodStats& StatsSummary::at(Method m) const {
  for (const auto& s : methods)
    if (s.method == m) return s;
  throw ValidationError("no statistics for method " + std::string(method_tag(m)));
}

ErrorStats summarize(std::span<const double> values) {
  if (values.empty()) throw ValidationError("cannot summarize an empty sample");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const double n = static_cast<double>(v.size());
  ErrorStats s;
  // Summation over sorted values keeps the result independent of input order.
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(ss / n);
  const std::size_t mid = v.size() / 2;
  s.median = v.size() % 2 == 1 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
  s.min = v.front();
  s.max = v.back();
  return s;
}

StatsSummary aggregate(std::span<const CaseRecord> records, SuccessThreshold loose, SuccessThreshold strict) {
  if (records.empty()) throw ValidationError("no records to aggregate");
  StatsSummary out;
  out.loose = loose;
  out.strict = strict;
  for (Method m : kAllMethods) {
    std::vector<double> rot, trans;
    int ok15 = 0, ok5 = 0, failures = 0;
    for (const auto& r : records) {
      if (r.method != m) continue;
      if (r.error.rotation_deg < 0.0 || r.error.translation_mm < 0.0) throw ValidationError("negative pose error");
      rot.push_back(r.error.rotation_deg);
      trans.push_back(r.error.translation_mm);
      ok15 += r.error.rotation_deg < loose.rotation_deg && r.error.translation_mm < loose.translation_mm;
      ok5 += r.error.rotation_deg < strict.rotation_deg && r.error.translation_mm < strict.translation_mm;
      failures += r.failed;
    }
    if (rot.empty()) continue;
    MethodStats s;
    s.method = m;
    s.count = static_cast<int>(rot.size());
    s.failures = failures;
    s.rotation_deg = summarize(rot);
    s.translation_mm = summarize(trans);
    s.pct_success_15 = 100.0 * ok15 / s.count;
    s.pct_success_5 = 100.0 * ok5 / s.count;
    out.methods.push_back(s);
  }
  return out;
}

json stats_json(const StatsSummary& s) {
  json methods = json::array();
  for (const auto& m : s.methods) {
    methods.push_back({{"method", method_tag(m.method)},
                       {"label", method_label(m.method)},
                       {"count", m.count},
                       {"failures", m.failures},
                       {"rotation_deg", error_json(m.rotation_deg)},
                       {"translation_mm", error_json(m.translation_mm)},
                       {"pct_success_15", m.pct_success_15},
                       {"pct_success_5", m.pct_success_5}});
  }
  return {{"std_kind", "population"},
          {"thresholds",
           {{"loose", {s.loose.rotation_deg, s.loose.translation_mm}},
            {"strict", {s.strict.rotation_deg, s.strict.translation_mm}}}},
          {"methods", methods}};
}

std::string stats_csv(const StatsSummary& s) {
  std::string out = "metric";
  for (const auto& m : s.methods) out += "," + std::string(method_label(m.method));
  out += '\n';
  auto row = [&](const char* name, auto get) {
    out += name;
    for (const auto& m : s.methods) out += "," + full(get(m));
    out += '\n';
  };
  row("rotation_deg_mean", [](const MethodStats& m) { return m.rotation_deg.mean; });
  row("rotation_deg_std", [](const MethodStats& m) { return m.rotation_deg.std; });
  row("rotation_deg_median", [](const MethodStats& m) { return m.rotation_deg.median; });
  row("translation_mm_mean", [](const MethodStats& m) { return m.translation_mm.mean; });
  row("translation_mm_std", [](const MethodStats& m) { return m.translation_mm.std; });
  row("translation_mm_median", [](const MethodStats& m) { return m.translation_mm.median; });
  row("pct_success_15", [](const MethodStats& m) { return m.pct_success_15; });
  row("pct_success_5", [](const MethodStats& m) { return m.pct_success_5; });
  row("count", [](const MethodStats& m) { return static_cast<double>(m.count); });
  row("failures", [](const MethodStats& m) { return static_cast<double>(m.failures); });
  return out;
}

std::string stats_table(const StatsSummary& s) {
  std::string out = "| |";
  std::string rule = "|---|";
  for (const auto& m : s.methods) {
    out += " " + std::string(method_label(m.method)) + " |";
    rule += "---|";
  }
  out += "\n" + rule + "\n";
  auto line = [&](const std::string& head, auto cell) {
    out += "| " + head + " |";
    for (const auto& m : s.methods) out += " " + cell(m) + " |";
    out += '\n';
  };
  line("Rot. (deg)", [](const MethodStats& m) { return fixed2(m.rotation_deg.mean) + " ± " + fixed2(m.rotation_deg.std); });
  line("", [](const MethodStats& m) { return "(" + fixed2(m.rotation_deg.median) + ")"; });
  line("Trans. (mm)",
       [](const MethodStats& m) { return fixed2(m.translation_mm.mean) + " ± " + fixed2(m.translation_mm.std); });
  line("", [](const MethodStats& m) { return "(" + fixed2(m.translation_mm.median) + ")"; });
  line(threshold_label(s.loose), [](const MethodStats& m) { return fixed2(m.pct_success_15) + "%"; });
  line(threshold_label(s.strict), [](const MethodStats& m) { return fixed2(m.pct_success_5) + "%"; });
  return out;
}

void write_stats(const std::filesystem::path& dir, const StatsSummary& s) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  auto put = [&](const char* name, const std::string& text) {
    std::ofstream out(dir / name);
    if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
    out << text;
  };
  put("stats.json", stats_json(s).dump(2) + "\n");
  put("stats.csv", stats_csv(s));
  put("table.md", stats_table(s));
}

}  // namespace s2v::harness
