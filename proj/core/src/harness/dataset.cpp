#include "s2v/harness/dataset.hpp"

#include "s2v/rng.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

namespace s2v::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kVolumeStream = 0x1000;
constexpr std::uint64_t kPoseStream = 0x2000;
constexpr std::uint64_t kSpeckleStream = 0x3000;

Vec3 volume_center(const DatasetConfig& cfg) {
  Vec3 c;
  for (int a = 0; a < 3; ++a) c[a] = 0.5 * (cfg.volume_dims[a] - 1) * cfg.voxel_spacing_mm[a];
  return c;
}

Vec3 frame_center(const DatasetConfig& cfg) {
  return {0.5 * (cfg.frame_dims[0] - 1) * cfg.pixel_spacing_mm[0], 0.5 * (cfg.frame_dims[1] - 1) * cfg.pixel_spacing_mm[1],
          0.0};
}

std::string stem_name(const char* prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%04d", prefix, i);
  return buf;
}

}  // namespace

RigidPose sample_gt_pose(std::uint64_t seed, const DatasetConfig& cfg) {
  Rng rng(seed);
  Vec3 axis;
  do {
    axis = Vec3(normal01(rng), normal01(rng), normal01(rng));
  } while (axis.norm() < 1e-6);
  axis.normalize();
  const double angle = uniform(rng, cfg.min_rotation_deg, cfg.max_rotation_deg) * std::numbers::pi / 180.0;
  Vec3 offset;
  for (int a = 0; a < 3; ++a) offset[a] = uniform(rng, -cfg.max_translation_mm, cfg.max_translation_mm);
  const Mat3 r = Eigen::AngleAxisd(angle, axis).toRotationMatrix();
  RigidPose p;
  p.rotation = r;
  p.translation = volume_center(cfg) + offset - r * frame_center(cfg);
  return p;
}

RigidPose center_aligning_pose(const Volume3D& vol, const Frame2D& frame) {
  return RigidPose::Translation(vol.center_mm() - frame.center_mm());
}

RigidPose center_aligning_pose(const DatasetConfig& cfg) {
  return RigidPose::Translation(volume_center(cfg) - frame_center(cfg));
}

json manifest_json(const Dataset& ds) {
  json j;
  j["format_version"] = 1;
  j["seed"] = ds.seed;
  j["dataset"] = to_json(ds.config);
  j["volumes"] = ds.volumes;
  json cases = json::array();
  for (const auto& c : ds.cases) {
    cases.push_back({{"id", c.id},
                     {"volume", c.volume},
                     {"frame", c.frame},
                     {"gt_pose", pose_to_json(c.gt)},
                     {"rotation_deg", c.rotation_deg},
                     {"center_offset_mm", {c.center_offset_mm.x(), c.center_offset_mm.y(), c.center_offset_mm.z()}}});
  }
  j["cases"] = std::move(cases);
  return j;
}

Dataset generate_dataset(const fs::path& dir, std::uint64_t seed, const DatasetConfig& cfg) {
  if (cfg.n_cases < 1) throw ValidationError("n_cases must be >= 1");
  Config probe;
  probe.dataset = cfg;
  probe.Validate();

  std::error_code ec;
  fs::create_directories(dir / "volumes", ec);
  fs::create_directories(dir / "frames", ec);
  if (ec || !fs::is_directory(dir / "frames")) throw std::runtime_error("cannot create dataset directory " + dir.string());

  Dataset ds;
  ds.root = dir;
  ds.seed = seed;
  ds.config = cfg;
  const int n_volumes = (cfg.n_cases + cfg.cases_per_volume - 1) / cfg.cases_per_volume;
  const Vec3 vc = volume_center(cfg);
  const Vec3 fc = frame_center(cfg);
  for (int v = 0; v < n_volumes; ++v) {
    const Volume3D vol = make_phantom(derive_seed(seed, kVolumeStream + v), cfg.volume_dims, cfg.voxel_spacing_mm);
    const std::string stem = "volumes/" + stem_name("vol", v);
    write_volume(dir / stem, vol);
    ds.volumes.push_back(stem);

    const int first = v * cfg.cases_per_volume;
    const int last = std::min(cfg.n_cases, first + cfg.cases_per_volume);
    for (int id = first; id < last; ++id) {
      CaseEntry c;
      c.id = id;
      c.volume = v;
      c.frame = "frames/" + stem_name("case", id);
      c.gt = sample_gt_pose(derive_seed(seed, kPoseStream + id), cfg);
      c.rotation_deg = rotation_angle_deg(c.gt.rotation, Mat3::Identity());
      c.center_offset_mm = apply(c.gt, fc) - vc;
      Frame2D frame = extract_slice(vol, c.gt, cfg.frame_dims, cfg.pixel_spacing_mm);
      if (cfg.degrade) frame = us_degrade(frame, derive_seed(seed, kSpeckleStream + id), cfg.degradation);
      write_frame(dir / c.frame, frame);
      ds.cases.push_back(std::move(c));
    }
  }

  std::ofstream out(dir / "manifest.json");
  if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
  out << manifest_json(ds).dump(2) << '\n';
  return ds;
}

Dataset load_dataset(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("no manifest.json in " + dir.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("bad manifest: ") + e.what());
  }
  Dataset ds;
  ds.root = dir;
  ds.seed = j.at("seed").get<std::uint64_t>();
  ds.config = dataset_config_from_json(j.at("dataset"));
  ds.volumes = j.at("volumes").get<std::vector<std::string>>();
  for (const auto& e : j.at("cases")) {
    CaseEntry c;
    c.id = e.at("id").get<int>();
    c.volume = e.at("volume").get<int>();
    if (c.volume < 0 || c.volume >= static_cast<int>(ds.volumes.size()))
      throw ValidationError("case " + std::to_string(c.id) + " references a missing volume");
    c.frame = e.at("frame").get<std::string>();
    c.gt = pose_from_json(e.at("gt_pose"));
    c.rotation_deg = e.at("rotation_deg").get<double>();
    const auto off = e.at("center_offset_mm").get<std::array<double, 3>>();
    c.center_offset_mm = Vec3(off[0], off[1], off[2]);
    ds.cases.push_back(std::move(c));
  }
  if (ds.cases.empty()) throw ValidationError("manifest lists no cases");
  return ds;
}

bool poses_within_range(const Dataset& ds, double tol) {
  const Vec3 vc = volume_center(ds.config);
  const Vec3 fc = frame_center(ds.config);
  for (const auto& c : ds.cases) {
    if (!c.gt.IsValid(1e-9)) return false;
    const double angle = rotation_angle_deg(c.gt.rotation, Mat3::Identity());
    if (angle < ds.config.min_rotation_deg - tol || angle > ds.config.max_rotation_deg + tol) return false;
    const Vec3 off = apply(c.gt, fc) - vc;
    if (off.cwiseAbs().maxCoeff() > ds.config.max_translation_mm + tol) return false;
  }
  return true;
}

}  // namespace s2v::harness
