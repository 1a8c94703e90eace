#pragma once

#include "s2v/geometry.hpp"
#include "s2v/matching.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

namespace s2v {

/// Raised when a closed-form solve or its derivative is undefined for the given input.
class DegenerateConfiguration : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when the rotation derivative is unbounded (lambda_k + lambda_l ~ 0 below).
class IllConditionedGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Per-pair derivatives of a scalar loss with respect to weight, US point and CT point.
using DwpGradient = MatchGradient;

/// Closed-form weighted Procrustes solution and the intermediates its derivative needs.
struct ProcrustesSolution {
  RigidPose pose;
  Vec3 us_centroid = Vec3::Zero();
  Vec3 ct_centroid = Vec3::Zero();
  Mat3 cross_covariance = Mat3::Zero();  // H = sum w_i (p_i - p)(q_i - q)^T
  Mat3 u = Mat3::Identity();
  Mat3 v = Mat3::Identity();
  Vec3 singular_values = Vec3::Zero();
  double reflection_sign = 1.0;
};

/// Minimizes sum w_i |R p_i + t - q_i|^2 over rotations R (det +1) and translations t.
ProcrustesSolution weighted_procrustes(std::span<const Vec3> us_points, std::span<const Vec3> ct_points,
                                       std::span<const double> weights);

RigidPose dwp(const MatchSet& matches);

struct PoseLossConfig {
  double lambda = 1.0;
  double translation_scale_mm = 100.0;
};

/// L = |R - R_gt|_F^2 + lambda * |t - t_gt|^2 / s^2.
double pose_loss(const RigidPose& est, const RigidPose& gt, const PoseLossConfig& cfg = {});

struct DwpLoss {
  double loss = 0.0;
  RigidPose pose;
  DwpGradient grad;
};

/// Loss of dwp(matches) against gt with analytic gradients through the closed-form solve.
DwpLoss dwp_loss_grad(const MatchSet& matches, const RigidPose& gt, const PoseLossConfig& cfg = {});

struct RansacOptions {
  int iterations = 500;
  double inlier_tol_mm = 2.0;
  std::uint64_t seed = 0;
  bool record_trace = false;
};

struct RansacResult {
  RigidPose pose;
  int inlier_count = 0;
  std::vector<int> inliers;
  std::vector<int> trace;  // inlier count per iteration (-1 for degenerate samples) when recorded
};

RansacResult ransac_pose(const MatchSet& matches, const RansacOptions& opts);

/// CSV "iteration,inliers" of a recorded trace.
void write_ransac_trace(const std::filesystem::path& path, const RansacResult& result);

}  // namespace s2v
