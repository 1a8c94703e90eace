#include "s2v/volume.hpp"

#include "s2v/grid_io.hpp"
#include "s2v/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace s2v {

Volume3D::Volume3D(std::array<int, 3> d, std::array<double, 3> s, float fill)
    : dims(d), spacing(s), data(static_cast<std::size_t>(d[0]) * d[1] * d[2], fill) {}

Vec3 Volume3D::extent_mm() const {
  return {(dims[0] - 1) * spacing[0], (dims[1] - 1) * spacing[1], (dims[2] - 1) * spacing[2]};
}

float Volume3D::sample(const Vec3& mm) const {
  const double x = mm.x() / spacing[0];
  const double y = mm.y() / spacing[1];
  const double z = mm.z() / spacing[2];
  if (!(x >= 0.0 && y >= 0.0 && z >= 0.0)) return 0.0f;
  if (x > dims[0] - 1 || y > dims[1] - 1 || z > dims[2] - 1) return 0.0f;

  // Clamp the base index so a sample exactly on the last node still has a valid upper neighbor.
  const int i = std::min(static_cast<int>(x), std::max(dims[0] - 2, 0));
  const int j = std::min(static_cast<int>(y), std::max(dims[1] - 2, 0));
  const int k = std::min(static_cast<int>(z), std::max(dims[2] - 2, 0));
  const double fx = x - i, fy = y - j, fz = z - k;
  const int i1 = std::min(i + 1, dims[0] - 1);
  const int j1 = std::min(j + 1, dims[1] - 1);
  const int k1 = std::min(k + 1, dims[2] - 1);

  const double c00 = at(i, j, k) * (1 - fx) + at(i1, j, k) * fx;
  const double c10 = at(i, j1, k) * (1 - fx) + at(i1, j1, k) * fx;
  const double c01 = at(i, j, k1) * (1 - fx) + at(i1, j, k1) * fx;
  const double c11 = at(i, j1, k1) * (1 - fx) + at(i1, j1, k1) * fx;
  const double c0 = c00 * (1 - fy) + c10 * fy;
  const double c1 = c01 * (1 - fy) + c11 * fy;
  return static_cast<float>(c0 * (1 - fz) + c1 * fz);
}

void Volume3D::Validate() const {
  for (int d : dims)
    if (d <= 0) throw ValidationError("volume dims must be positive");
  for (double s : spacing)
    if (!(s > 0.0)) throw ValidationError("volume spacing must be positive");
  if (data.size() != static_cast<std::size_t>(dims[0]) * dims[1] * dims[2])
    throw ValidationError("volume data length does not match dims");
  for (float f : data)
    if (!std::isfinite(f)) throw ValidationError("volume contains non-finite intensities");
}

Frame2D::Frame2D(std::array<int, 2> d, std::array<double, 2> s, float fill)
    : dims(d), spacing(s), data(static_cast<std::size_t>(d[0]) * d[1], fill) {}

Vec3 Frame2D::center_mm() const { return lift((dims[0] - 1) / 2.0, (dims[1] - 1) / 2.0); }

void Frame2D::Validate() const {
  for (int d : dims)
    if (d <= 0) throw ValidationError("frame dims must be positive");
  for (double s : spacing)
    if (!(s > 0.0)) throw ValidationError("frame spacing must be positive");
  if (data.size() != static_cast<std::size_t>(dims[0]) * dims[1])
    throw ValidationError("frame data length does not match dims");
  for (float f : data)
    if (!std::isfinite(f)) throw ValidationError("frame contains non-finite intensities");
}

namespace {

struct Blob {
  Vec3 center;
  Mat3 axes_inv;  // maps offsets to unit-sphere coordinates
  double amplitude;
  Vec3 half_box;  // bounding half-extent in mm
};

// 1 inside r < 0.8, 0 beyond r > 1.2, C1-smooth in between.
double falloff(double r) {
  if (r <= 0.8) return 1.0;
  if (r >= 1.2) return 0.0;
  const double t = (1.2 - r) / 0.4;
  return t * t * (3.0 - 2.0 * t);
}

}  // namespace

Volume3D make_phantom(std::uint64_t seed, std::array<int, 3> dims, std::array<double, 3> spacing) {
  for (int d : dims)
    if (d < 16) throw ValidationError("phantom dims must be >= 16 per axis");
  for (double s : spacing)
    if (!(s > 0.0)) throw ValidationError("phantom spacing must be positive");

  Rng rng(derive_seed(seed, 0x70'68'61'6eULL));
  Volume3D vol(dims, spacing);
  const Vec3 extent = vol.extent_mm();

  const int n_blobs = 5 + static_cast<int>(rng() % 11);
  std::vector<Blob> blobs;
  blobs.reserve(n_blobs);
  for (int b = 0; b < n_blobs; ++b) {
    Blob blob;
    for (int a = 0; a < 3; ++a) blob.center[a] = uniform(rng, 0.1, 0.9) * extent[a];
    const double min_extent = extent.minCoeff();
    Vec3 radii;
    for (int a = 0; a < 3; ++a) radii[a] = uniform(rng, 0.06, 0.2) * min_extent;
    const Vec3 axis(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1));
    const double angle = uniform(rng, 0.0, std::numbers::pi);
    const Mat3 rot = RigidPose::FromAxisAngle(axis.norm() > 1e-6 ? axis : Vec3::UnitX(), angle).rotation;
    blob.axes_inv = radii.cwiseInverse().asDiagonal() * rot.transpose();
    blob.amplitude = uniform(rng, 0.3, 0.9);
    blob.half_box = Vec3::Constant(1.2 * radii.maxCoeff());
    blobs.push_back(blob);
  }

  const Vec3 grad_dir = Vec3(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1)).normalized();
  const double grad_norm = std::abs(grad_dir.x()) * extent.x() + std::abs(grad_dir.y()) * extent.y() +
                           std::abs(grad_dir.z()) * extent.z();
  const double grad_offset = (std::min(0.0, grad_dir.x()) * extent.x() + std::min(0.0, grad_dir.y()) * extent.y() +
                              std::min(0.0, grad_dir.z()) * extent.z());

  // Background in [0.02, 0.10] from a linear ramp; blobs combine as 1 - prod(1 - a_k f_k).
  std::vector<float> keep(vol.size(), 1.0f);
  for (const Blob& blob : blobs) {
    int lo[3], hi[3];
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::max(0, static_cast<int>(std::floor((blob.center[a] - blob.half_box[a]) / spacing[a])));
      hi[a] = std::min(dims[a] - 1, static_cast<int>(std::ceil((blob.center[a] + blob.half_box[a]) / spacing[a])));
    }
    for (int k = lo[2]; k <= hi[2]; ++k)
      for (int j = lo[1]; j <= hi[1]; ++j)
        for (int i = lo[0]; i <= hi[0]; ++i) {
          const Vec3 p(i * spacing[0], j * spacing[1], k * spacing[2]);
          const double r = (blob.axes_inv * (p - blob.center)).norm();
          const double f = falloff(r);
          if (f > 0.0) keep[vol.index(i, j, k)] *= static_cast<float>(1.0 - blob.amplitude * f);
        }
  }

  for (int k = 0; k < dims[2]; ++k)
    for (int j = 0; j < dims[1]; ++j)
      for (int i = 0; i < dims[0]; ++i) {
        const Vec3 p(i * spacing[0], j * spacing[1], k * spacing[2]);
        const double ramp = grad_norm > 0 ? (grad_dir.dot(p) - grad_offset) / grad_norm : 0.0;
        const double bg = 0.02 + 0.08 * std::clamp(ramp, 0.0, 1.0);
        const std::size_t idx = vol.index(i, j, k);
        const double v = bg + (1.0 - bg) * (1.0 - keep[idx]);
        vol.data[idx] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
  return vol;
}

Frame2D extract_slice(const Volume3D& vol, const RigidPose& pose, std::array<int, 2> frame_dims,
                      std::array<double, 2> frame_spacing) {
  Frame2D frame(frame_dims, frame_spacing);
  const Vec3 du = pose.rotation.col(0) * frame_spacing[0];
  const Vec3 dv = pose.rotation.col(1) * frame_spacing[1];
  for (int v = 0; v < frame_dims[1]; ++v) {
    const Vec3 row = pose.translation + dv * v;
    for (int u = 0; u < frame_dims[0]; ++u) {
      frame.at(u, v) = vol.sample(row + du * u);
    }
  }
  return frame;
}

Frame2D us_degrade(const Frame2D& frame, std::uint64_t seed, const DegradeConfig& cfg) {
  Frame2D out = frame;
  Rng rng(derive_seed(seed, 0x75'73'64'67ULL));
  std::gamma_distribution<double> speckle(cfg.speckle_shape, 1.0 / cfg.speckle_shape);
  for (int v = 0; v < frame.dims[1]; ++v) {
    const double attenuation = std::exp(-cfg.attenuation_per_mm * v * frame.spacing[1]);
    for (int u = 0; u < frame.dims[0]; ++u) {
      const double x = frame.at(u, v);
      const double remapped = std::copysign(std::pow(std::abs(x), cfg.gamma), x);
      out.at(u, v) = static_cast<float>(remapped * speckle(rng) * attenuation);
    }
  }
  return out;
}

void write_volume(const std::filesystem::path& path, const Volume3D& vol) {
  write_raw_grid(path, vol.dims, vol.spacing, vol.data);
}

Volume3D read_volume(const std::filesystem::path& path) {
  RawGrid g = read_raw_grid(path);
  if (g.dims.size() != 3) throw ValidationError("volume file must have 3 dims");
  Volume3D vol;
  vol.dims = {g.dims[0], g.dims[1], g.dims[2]};
  vol.spacing = {g.spacing_mm[0], g.spacing_mm[1], g.spacing_mm[2]};
  vol.data = std::move(g.data);
  vol.Validate();
  return vol;
}

void write_frame(const std::filesystem::path& path, const Frame2D& frame) {
  write_raw_grid(path, frame.dims, frame.spacing, frame.data);
}

Frame2D read_frame(const std::filesystem::path& path) {
  RawGrid g = read_raw_grid(path);
  if (g.dims.size() != 2) throw ValidationError("frame file must have 2 dims");
  Frame2D frame;
  frame.dims = {g.dims[0], g.dims[1]};
  frame.spacing = {g.spacing_mm[0], g.spacing_mm[1]};
  frame.data = std::move(g.data);
  frame.Validate();
  return frame;
}

}  // namespace s2v
