#include "s2v/harness/distribution.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>

namespace s2v::harness {

using nlohmann::json;

namespace {

double quantile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

struct MethodSamples {
  Method method;
  std::vector<double> rotation;
  std::vector<double> translation;
};

std::vector<MethodSamples> split(std::span<const CaseRecord> records) {
  std::vector<MethodSamples> out;
  for (Method m : kAllMethods) {
    MethodSamples s{m, {}, {}};
    bool present = false;
    for (const auto& r : records) {
      if (r.method != m) continue;
      present = true;
      if (r.failed) continue;
      s.rotation.push_back(r.error.rotation_deg);
      s.translation.push_back(r.error.translation_mm);
    }
    if (present) out.push_back(std::move(s));
  }
  return out;
}

json density_json(const Density& d) {
  return {{"bandwidth", d.bandwidth}, {"grid", d.grid}, {"density", d.values}};
}

// One violin per method: mirrored density outline, error axis vertical.
std::string violin_svg(const std::vector<MethodSamples>& methods, const std::vector<std::array<Density, 2>>& dens) {
  constexpr double kPanelW = 420.0, kPanelH = 320.0, kTop = 40.0, kLeft = 60.0;
  const double width = 2 * kPanelW + 2 * kLeft;
  const double height = kPanelH + kTop + 70.0;
  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(width) + "\" height=\"" + num(height) +
                    "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  const char* titles[2] = {"Rotation error (deg)", "Translation error (mm)"};
  const char* colors[4] = {"#8c8c8c", "#4c72b0", "#dd8452", "#55a868"};
  for (int panel = 0; panel < 2; ++panel) {
    const double x0 = kLeft + panel * (kPanelW + kLeft);
    double ymax = 0.0;
    for (const auto& d : dens)
      if (!d[panel].grid.empty()) ymax = std::max(ymax, d[panel].grid.back());
    if (!(ymax > 0.0)) ymax = 1.0;
    const double slot = kPanelW / static_cast<double>(std::max<std::size_t>(methods.size(), 1));
    svg += "<text x=\"" + num(x0 + kPanelW / 2) + "\" y=\"20\" text-anchor=\"middle\">" + titles[panel] + "</text>\n";
    svg += "<line x1=\"" + num(x0) + "\" y1=\"" + num(kTop) + "\" x2=\"" + num(x0) + "\" y2=\"" + num(kTop + kPanelH) +
           "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
      const double v = ymax * t / 4.0;
      const double y = kTop + kPanelH - kPanelH * t / 4.0;
      svg += "<text x=\"" + num(x0 - 6) + "\" y=\"" + num(y + 4) + "\" text-anchor=\"end\">" + num(v) + "</text>\n";
    }
    for (std::size_t k = 0; k < methods.size(); ++k) {
      const double cx = x0 + slot * (static_cast<double>(k) + 0.5);
      const Density& d = dens[k][panel];
      if (!d.values.empty()) {
        const double peak = *std::max_element(d.values.begin(), d.values.end());
        const double half = 0.42 * slot;
        std::string right, left;
        for (std::size_t i = 0; i < d.grid.size(); ++i) {
          const double g = std::clamp(d.grid[i], 0.0, ymax);
          const double y = kTop + kPanelH - kPanelH * g / ymax;
          const double w = peak > 0.0 ? half * d.values[i] / peak : 0.0;
          right += num(cx + w) + "," + num(y) + " ";
          left = num(cx - w) + "," + num(y) + " " + left;
        }
        svg += "<polygon points=\"" + right + left + "\" fill=\"" + colors[k % 4] +
               "\" fill-opacity=\"0.6\" stroke=\"black\" stroke-width=\"0.5\"/>\n";
      }
      svg += "<text x=\"" + num(cx) + "\" y=\"" + num(kTop + kPanelH + 18) + "\" text-anchor=\"middle\">" +
             std::string(method_label(methods[k].method)) + "</text>\n";
    }
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace

double silverman_bandwidth(std::span<const double> samples) {
  if (samples.empty()) throw ValidationError("bandwidth of an empty sample");
  std::vector<double> v(samples.begin(), samples.end());
  std::sort(v.begin(), v.end());
  const double n = static_cast<double>(v.size());
  if (v.size() < 2) return 1.0;
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  const double iqr = (quantile(v, 0.75) - quantile(v, 0.25)) / 1.34;
  const double spread = iqr > 0.0 ? std::min(sd, iqr) : sd;
  if (!(spread > 0.0)) return 1.0;
  return 0.9 * spread * std::pow(n, -0.2);
}

Density gaussian_kde(std::span<const double> samples, int points) {
  if (samples.empty()) throw ValidationError("KDE of an empty sample");
  if (points < 2) throw ValidationError("KDE grid needs at least two points");
  Density d;
  d.bandwidth = silverman_bandwidth(samples);
  const auto [lo_it, hi_it] = std::minmax_element(samples.begin(), samples.end());
  const double lo = *lo_it - 5.0 * d.bandwidth;
  const double hi = *hi_it + 5.0 * d.bandwidth;
  const double norm = 1.0 / (static_cast<double>(samples.size()) * d.bandwidth * std::sqrt(2.0 * std::numbers::pi));
  d.grid.resize(static_cast<std::size_t>(points));
  d.values.resize(static_cast<std::size_t>(points));
  for (int i = 0; i < points; ++i) {
    const double x = lo + (hi - lo) * i / (points - 1);
    double acc = 0.0;
    for (double s : samples) {
      const double z = (x - s) / d.bandwidth;
      acc += std::exp(-0.5 * z * z);
    }
    d.grid[static_cast<std::size_t>(i)] = x;
    d.values[static_cast<std::size_t>(i)] = acc * norm;
  }
  return d;
}

double integrate(const Density& d) {
  double total = 0.0;
  for (std::size_t i = 1; i < d.grid.size(); ++i)
    total += 0.5 * (d.values[i] + d.values[i - 1]) * (d.grid[i] - d.grid[i - 1]);
  return total;
}

void export_distribution(std::span<const CaseRecord> records, const std::filesystem::path& dir) {
  if (records.empty()) throw ValidationError("no records to export");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);

  {
    std::ofstream csv(dir / "errors.csv");
    if (!csv) throw std::runtime_error("cannot write " + (dir / "errors.csv").string());
    csv << "method,case_id,rotation_deg,translation_mm,failed\n";
    char buf[64];
    for (Method m : kAllMethods)
      for (const auto& r : records) {
        if (r.method != m) continue;
        csv << method_tag(m) << ',' << r.case_id;
        std::snprintf(buf, sizeof buf, ",%.17g,%.17g", r.error.rotation_deg, r.error.translation_mm);
        csv << buf << ',' << int{r.failed} << '\n';
      }
  }

  const auto methods = split(records);
  std::vector<std::array<Density, 2>> dens;
  json j;
  j["kernel"] = "gaussian";
  j["bandwidth_rule"] = "silverman";
  json per = json::array();
  for (const auto& s : methods) {
    std::array<Density, 2> d{};
    json entry = {{"method", method_tag(s.method)}, {"label", method_label(s.method)}, {"samples", s.rotation.size()}};
    if (!s.rotation.empty()) {
      d[0] = gaussian_kde(s.rotation);
      d[1] = gaussian_kde(s.translation);
      entry["rotation_deg"] = density_json(d[0]);
      entry["translation_mm"] = density_json(d[1]);
    } else {
      entry["rotation_deg"] = nullptr;
      entry["translation_mm"] = nullptr;
    }
    per.push_back(std::move(entry));
    dens.push_back(std::move(d));
  }
  j["methods"] = std::move(per);
  {
    std::ofstream out(dir / "density.json");
    if (!out) throw std::runtime_error("cannot write " + (dir / "density.json").string());
    out << j.dump(2) << '\n';
  }
  std::ofstream svg(dir / "violin.svg");
  if (!svg) throw std::runtime_error("cannot write " + (dir / "violin.svg").string());
  svg << violin_svg(methods, dens);
}

}  // namespace s2v::harness
