#pragma once

#include "s2v/geometry.hpp"
#include "s2v/volume.hpp"

#include <array>
#include <filesystem>
#include <vector>

namespace s2v {

struct MiConfig {
  int bins = 32;
  int max_iterations = 400;
  double step_deg = 2.0;
  double step_mm = 2.0;
  double convergence_tol = 1e-5;
  /// Extra simplex runs rebuilt around the best point with the initial steps; they stop early
  /// once a run brings no improvement.
  int restarts = 4;
  bool record_trace = false;

  void Validate() const;
};

/// Marginal entropy (nats) with `bins` equal-width bins over [min, max]; 0 for constant images.
double entropy(const Frame2D& frame, int bins);

/// Histogram mutual information in nats. Each image is binned over its own [min, max].
double mutual_information(const Frame2D& a, const Frame2D& b, int bins);

/// Six refinement parameters: intrinsic Z-Y-X Euler angles (degrees) about the frame center,
/// then a translation (mm), both expressed in frame coordinates.
using MiParams = std::array<double, 6>;

/// Offset transform in frame coordinates; the refined pose is compose(init, offset).
RigidPose euler_offset(const MiParams& params, const Vec3& frame_center_mm);

struct MiTraceRow {
  int iteration = 0;
  double mi = 0.0;
  MiParams params{};
};

struct MiResult {
  RigidPose pose;
  double initial_mi = 0.0;
  double final_mi = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool hit_iteration_limit = false;
  std::vector<MiTraceRow> trace;
};

/// Maximizes MI(extract_slice(vol, pose), frame) with a Nelder-Mead simplex started at init.
/// The returned pose is the best one evaluated, so final_mi >= initial_mi. `iterations` counts
/// all runs; hit_iteration_limit is set when any run stopped on max_iterations.
MiResult mi_refine(const Volume3D& vol, const Frame2D& frame, const RigidPose& init, const MiConfig& cfg);

void write_mi_trace(const std::filesystem::path& path, const MiResult& result);

}  // namespace s2v
