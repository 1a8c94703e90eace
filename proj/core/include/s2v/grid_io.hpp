#pragma once

#include <filesystem>
#include <span>
#include <vector>

namespace s2v {

/// Scalar grid stored as <stem>.raw (f32le, x-fastest) plus <stem>.json sidecar
/// {"dims": [...], "spacing_mm": [...], "dtype": "f32le", "order": "x-fastest"}.
struct RawGrid {
  std::vector<int> dims;
  std::vector<double> spacing_mm;
  std::vector<float> data;
};

/// `path` may name either the .json sidecar or the .raw blob; both are written.
void write_raw_grid(const std::filesystem::path& path, std::span<const int> dims,
                    std::span<const double> spacing_mm, std::span<const float> data);
RawGrid read_raw_grid(const std::filesystem::path& path);

void write_f32le(std::ostream& out, std::span<const float> values);
std::vector<float> read_f32le(std::istream& in, std::size_t count);

}  // namespace s2v
