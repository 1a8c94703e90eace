#pragma once

#include "s2v/geometry.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace s2v {

/// Scalar volume, x-fastest storage. Voxel (i, j, k) sits at (i*sx, j*sy, k*sz) mm.
struct Volume3D {
  std::array<int, 3> dims{0, 0, 0};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::vector<float> data;

  Volume3D() = default;
  Volume3D(std::array<int, 3> dims, std::array<double, 3> spacing, float fill = 0.0f);

  std::size_t size() const { return data.size(); }
  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(dims[0]) * (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims[1]) * k);
  }
  float& at(int i, int j, int k) { return data[index(i, j, k)]; }
  float at(int i, int j, int k) const { return data[index(i, j, k)]; }

  /// Physical extent covered by voxel centers, (n-1)*spacing per axis.
  Vec3 extent_mm() const;
  Vec3 center_mm() const { return extent_mm() / 2.0; }

  /// Trilinear sample at a millimeter position; 0 outside the voxel-center hull.
  float sample(const Vec3& mm) const;

  void Validate() const;
};

/// Scalar image, u-fastest storage. Pixel (u, v) lifts to (u*su, v*sv, 0) mm in probe space.
struct Frame2D {
  std::array<int, 2> dims{0, 0};
  std::array<double, 2> spacing{0.5, 0.5};
  std::vector<float> data;

  Frame2D() = default;
  Frame2D(std::array<int, 2> dims, std::array<double, 2> spacing, float fill = 0.0f);

  std::size_t size() const { return data.size(); }
  std::size_t index(int u, int v) const {
    return static_cast<std::size_t>(u) + static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(v);
  }
  float& at(int u, int v) { return data[index(u, v)]; }
  float at(int u, int v) const { return data[index(u, v)]; }

  Vec3 lift(double u, double v) const { return {u * spacing[0], v * spacing[1], 0.0}; }
  /// Lifted position of the image center.
  Vec3 center_mm() const;

  void Validate() const;
};

Volume3D make_phantom(std::uint64_t seed, std::array<int, 3> dims, std::array<double, 3> spacing);

Frame2D extract_slice(const Volume3D& vol, const RigidPose& pose, std::array<int, 2> frame_dims,
                      std::array<double, 2> frame_spacing);

struct DegradeConfig {
  double gamma = 0.7;               // monotone remap exponent
  double speckle_shape = 4.0;       // gamma-distribution shape of the multiplicative speckle (mean 1)
  double attenuation_per_mm = 0.01; // exp(-a * depth) along v
};

Frame2D us_degrade(const Frame2D& frame, std::uint64_t seed, const DegradeConfig& cfg = {});

void write_volume(const std::filesystem::path& path, const Volume3D& vol);
Volume3D read_volume(const std::filesystem::path& path);
void write_frame(const std::filesystem::path& path, const Frame2D& frame);
Frame2D read_frame(const std::filesystem::path& path);

}  // namespace s2v
