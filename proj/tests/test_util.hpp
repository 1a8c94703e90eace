#pragma once

#include "s2v/geometry.hpp"
#include "s2v/matching.hpp"
#include "s2v/rng.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace s2v::test {

inline Vec3 random_vec(Rng& rng, double lo, double hi) {
  return {uniform(rng, lo, hi), uniform(rng, lo, hi), uniform(rng, lo, hi)};
}

inline RigidPose random_pose(Rng& rng, double max_angle_rad = 3.14159, double max_t = 50.0) {
  Vec3 axis(normal01(rng), normal01(rng), normal01(rng));
  axis.normalize();
  return RigidPose::FromAxisAngle(axis, uniform(rng, 0.0, max_angle_rad), random_vec(rng, -max_t, max_t));
}

inline Eigen::MatrixXd random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * normal01(rng);
  return m;
}

/// Matches q_i = pose(p_i) with given weights.
inline MatchSet exact_matches(const std::vector<Vec3>& p, const RigidPose& pose, const std::vector<double>& w) {
  MatchSet ms;
  for (std::size_t i = 0; i < p.size(); ++i) {
    Match m;
    m.us_point = p[i];
    m.ct_point = apply(pose, p[i]);
    m.weight = w[i];
    ms.pairs.push_back(m);
  }
  return ms;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("s2v_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace s2v::test
