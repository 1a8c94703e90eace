#pragma once

#include "s2v/harness/config.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace s2v::harness {

struct CaseEntry {
  int id = 0;
  int volume = 0;     // index into Dataset::volumes
  std::string frame;  // stem relative to the dataset root
  RigidPose gt;
  double rotation_deg = 0.0;        // angle of the gt rotation
  Vec3 center_offset_mm = Vec3::Zero();  // frame-center position minus volume center
};

struct Dataset {
  std::filesystem::path root;
  std::uint64_t seed = 0;
  DatasetConfig config;
  std::vector<std::string> volumes;  // stems relative to root
  std::vector<CaseEntry> cases;

  std::filesystem::path volume_path(int v) const { return root / volumes.at(static_cast<std::size_t>(v)); }
  std::filesystem::path frame_path(const CaseEntry& c) const { return root / c.frame; }
};

/// Random gt pose: uniform axis, angle uniform in [min, max] degrees, frame center placed at the
/// volume center plus an offset uniform in the +-max_translation cube.
RigidPose sample_gt_pose(std::uint64_t seed, const DatasetConfig& cfg);

/// Identity rotation with the frame center on the volume center.
RigidPose center_aligning_pose(const Volume3D& vol, const Frame2D& frame);
RigidPose center_aligning_pose(const DatasetConfig& cfg);

/// Writes volumes/, frames/ and manifest.json under dir. Byte-deterministic in (seed, cfg).
Dataset generate_dataset(const std::filesystem::path& dir, std::uint64_t seed, const DatasetConfig& cfg);

Dataset load_dataset(const std::filesystem::path& dir);

nlohmann::json manifest_json(const Dataset& ds);

/// True when every gt pose lies inside the configured rotation and translation ranges.
bool poses_within_range(const Dataset& ds, double tol = 1e-6);

}  // namespace s2v::harness
