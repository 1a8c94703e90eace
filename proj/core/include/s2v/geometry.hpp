#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <nlohmann/json.hpp>

#include <array>
#include <filesystem>
#include <stdexcept>

namespace s2v {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Thrown when inputs violate a documented precondition.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Rigid transform mapping frame-space millimeters into volume-space millimeters:
/// x_volume = rotation * x_frame + translation.
struct RigidPose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidPose Identity() { return {}; }
  static RigidPose FromMatrix(const Mat4& m);
  static RigidPose FromAxisAngle(const Vec3& axis, double angle_rad, const Vec3& t = Vec3::Zero());
  static RigidPose Translation(const Vec3& t);

  Mat4 matrix() const;
  /// True when rotation is orthonormal with det +1 within tol.
  bool IsValid(double tol = 1e-9) const;
};

RigidPose RotZ(double degrees);

/// Applies b first, then a.
RigidPose compose(const RigidPose& a, const RigidPose& b);
RigidPose invert(const RigidPose& pose);
Vec3 apply(const RigidPose& pose, const Vec3& point);

/// Nearest rotation in the Frobenius sense (polar factor, det +1).
Mat3 orthonormalize(const Mat3& r);

/// Geodesic angle between two rotations, degrees, in [0, 180].
double rotation_angle_deg(const Mat3& a, const Mat3& b);

struct SuccessThreshold {
  double rotation_deg;
  double translation_mm;
};

inline constexpr SuccessThreshold kInitThreshold{15.0, 15.0};
inline constexpr SuccessThreshold kNavigationThreshold{5.0, 5.0};

struct PoseError {
  double rotation_deg = 0.0;
  double translation_mm = 0.0;
  bool success_15 = false;
  bool success_5 = false;
};

/// Success flags use strict comparisons on both components jointly.
PoseError pose_error(const RigidPose& est, const RigidPose& gt,
                     SuccessThreshold loose = kInitThreshold,
                     SuccessThreshold strict = kNavigationThreshold);

struct CalibrationSpec {
  std::array<double, 2> pixel_spacing{0.5, 0.5};
  std::array<double, 3> voxel_spacing{1.0, 1.0, 1.0};

  void Validate() const;
};

// Pose file: {"matrix": 4x4 row-major, "units": "mm"}.
nlohmann::json pose_to_json(const RigidPose& pose);
RigidPose pose_from_json(const nlohmann::json& j);
void write_pose(const std::filesystem::path& path, const RigidPose& pose);
RigidPose read_pose(const std::filesystem::path& path);

}  // namespace s2v
