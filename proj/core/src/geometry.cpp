#include "s2v/geometry.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

namespace s2v {

namespace {
constexpr double kDriftTol = 1e-12;
}

RigidPose RigidPose::FromMatrix(const Mat4& m) {
  RigidPose p;
  p.rotation = m.topLeftCorner<3, 3>();
  p.translation = m.topRightCorner<3, 1>();
  return p;
}

RigidPose RigidPose::FromAxisAngle(const Vec3& axis, double angle_rad, const Vec3& t) {
  RigidPose p;
  const double n = axis.norm();
  if (n > 0.0) {
    p.rotation = Eigen::AngleAxisd(angle_rad, axis / n).toRotationMatrix();
  }
  p.translation = t;
  return p;
}

RigidPose RigidPose::Translation(const Vec3& t) {
  RigidPose p;
  p.translation = t;
  return p;
}

Mat4 RigidPose::matrix() const {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = rotation;
  m.topRightCorner<3, 1>() = translation;
  return m;
}

bool RigidPose::IsValid(double tol) const {
  if (!rotation.allFinite() || !translation.allFinite()) return false;
  const double ortho = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
  return ortho <= tol && std::abs(rotation.determinant() - 1.0) <= tol;
}

RigidPose RotZ(double degrees) {
  return RigidPose::FromAxisAngle(Vec3::UnitZ(), degrees * std::numbers::pi / 180.0);
}

Mat3 orthonormalize(const Mat3& r) {
  Eigen::JacobiSVD<Mat3> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1.0 : 1.0;
  return svd.matrixU() * d * svd.matrixV().transpose();
}

RigidPose compose(const RigidPose& a, const RigidPose& b) {
  RigidPose out;
  out.rotation = a.rotation * b.rotation;
  out.translation = a.rotation * b.translation + a.translation;
  const double drift = (out.rotation.transpose() * out.rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (drift > kDriftTol) out.rotation = orthonormalize(out.rotation);
  return out;
}

RigidPose invert(const RigidPose& pose) {
  RigidPose out;
  out.rotation = pose.rotation.transpose();
  out.translation = -(out.rotation * pose.translation);
  return out;
}

Vec3 apply(const RigidPose& pose, const Vec3& point) {
  return pose.rotation * point + pose.translation;
}

double rotation_angle_deg(const Mat3& a, const Mat3& b) {
  const double c = std::clamp(((b.transpose() * a).trace() - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c) * 180.0 / std::numbers::pi;
}

PoseError pose_error(const RigidPose& est, const RigidPose& gt, SuccessThreshold loose,
                     SuccessThreshold strict) {
  PoseError e;
  e.rotation_deg = rotation_angle_deg(est.rotation, gt.rotation);
  e.translation_mm = (est.translation - gt.translation).norm();
  e.success_15 = e.rotation_deg < loose.rotation_deg && e.translation_mm < loose.translation_mm;
  e.success_5 = e.rotation_deg < strict.rotation_deg && e.translation_mm < strict.translation_mm;
  return e;
}

void CalibrationSpec::Validate() const {
  for (double s : pixel_spacing)
    if (!(s > 0.0)) throw ValidationError("pixel spacing must be positive");
  for (double s : voxel_spacing)
    if (!(s > 0.0)) throw ValidationError("voxel spacing must be positive");
}

nlohmann::json pose_to_json(const RigidPose& pose) {
  const Mat4 m = pose.matrix();
  nlohmann::json rows = nlohmann::json::array();
  for (int r = 0; r < 4; ++r) {
    rows.push_back({m(r, 0), m(r, 1), m(r, 2), m(r, 3)});
  }
  return {{"matrix", rows}, {"units", "mm"}};
}

RigidPose pose_from_json(const nlohmann::json& j) {
  if (!j.contains("matrix")) throw ValidationError("pose JSON lacks \"matrix\"");
  if (j.contains("units") && j.at("units") != "mm") throw ValidationError("pose units must be mm");
  const auto& rows = j.at("matrix");
  if (!rows.is_array() || rows.size() != 4) throw ValidationError("pose matrix must be 4x4");
  Mat4 m;
  for (int r = 0; r < 4; ++r) {
    if (!rows[r].is_array() || rows[r].size() != 4) throw ValidationError("pose matrix must be 4x4");
    for (int c = 0; c < 4; ++c) m(r, c) = rows[r][c].get<double>();
  }
  RigidPose p = RigidPose::FromMatrix(m);
  if (!p.IsValid(1e-6)) throw ValidationError("pose rotation is not a proper rotation");
  return p;
}

void write_pose(const std::filesystem::path& path, const RigidPose& pose) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << pose_to_json(pose).dump(2) << '\n';
}

RigidPose read_pose(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return pose_from_json(nlohmann::json::parse(in));
}

}  // namespace s2v
