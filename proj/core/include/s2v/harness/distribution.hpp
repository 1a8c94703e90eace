#pragma once

#include "s2v/harness/pipeline.hpp"

#include <filesystem>
#include <span>
#include <vector>

namespace s2v::harness {

struct Density {
  double bandwidth = 0.0;
  std::vector<double> grid;
  std::vector<double> values;
};

/// Silverman's rule 0.9 * min(sd, IQR / 1.34) * n^(-1/5) with the sample sd; falls back to the
/// sd when the IQR is zero and to 1.0 when the sample has no spread.
double silverman_bandwidth(std::span<const double> samples);

/// Gaussian KDE on `points` evenly spaced values covering min - 5h .. max + 5h.
Density gaussian_kde(std::span<const double> samples, int points = 512);

/// Trapezoid integral of a density over its grid.
double integrate(const Density& d);

/// Writes errors.csv (raw per-case errors), density.json (KDE samples per method and metric)
/// and violin.svg into dir. Failed cases are listed in the CSV but left out of the densities.
void export_distribution(std::span<const CaseRecord> records, const std::filesystem::path& dir);

}  // namespace s2v::harness
