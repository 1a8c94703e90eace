#pragma once

#include "s2v/geometry.hpp"
#include "s2v/tensor_bundle.hpp"
#include "s2v/volume.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace s2v {

enum class Modality { kUltrasound, kCt };

using GridIndex = std::array<int, 3>;

/// Dense descriptor grid at 1/scale of the input resolution. Cells are stored x-fastest,
/// one row of `data` per cell. 2D maps keep grid_dims[2] == 1.
struct FeatureMap {
  int ndim = 2;
  GridIndex grid_dims{1, 1, 1};
  int scale = 8;
  std::array<double, 3> input_spacing{1.0, 1.0, 1.0};
  Modality source = Modality::kUltrasound;
  Eigen::MatrixXd data;  // cells x channels

  int channels() const { return static_cast<int>(data.cols()); }
  int cell_count() const { return grid_dims[0] * grid_dims[1] * grid_dims[2]; }
  int cell(const GridIndex& g) const { return g[0] + grid_dims[0] * (g[1] + grid_dims[1] * g[2]); }
  GridIndex grid_of(int cell) const;
  bool contains(const GridIndex& g) const;
  /// Millimeter position of a cell: index * scale * spacing (z = 0 for frames).
  Vec3 position_mm(const GridIndex& g) const;
  /// Nearest cell to a millimeter position, clamped to the grid.
  GridIndex nearest_cell(const Vec3& mm) const;
};

/// Flattened features. index_map[t] is the grid coordinate of token t.
struct TokenSequence {
  Eigen::MatrixXd tokens;  // N x d
  std::vector<GridIndex> index_map;
  GridIndex grid_dims{1, 1, 1};
  int ndim = 2;
  int scale = 8;
  std::array<double, 3> input_spacing{1.0, 1.0, 1.0};
  Modality source = Modality::kUltrasound;

  int size() const { return static_cast<int>(tokens.rows()); }
  int dim() const { return static_cast<int>(tokens.cols()); }
  Vec3 position_mm(int token) const;
};

struct ConvLayer {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;  // odd; spatial extent per axis
  int stride = 2;
  Eigen::MatrixXd weights;  // out x (in * kernel^ndim), tap order: channel, then z, y, x
  Eigen::VectorXd bias;     // out
};

/// Three strided 3x3(x3) stages (1/2, 1/4, 1/8) with 1x1 heads for the fine tap (after
/// stage 2) and the coarse tap (after stage 3).
struct ExtractorWeights {
  int ndim = 2;
  bool nonlinearity = true;
  std::array<ConvLayer, 3> stages;
  ConvLayer fine_head;
  ConvLayer coarse_head;

  int coarse_channels() const { return coarse_head.out_channels; }
  int fine_channels() const { return fine_head.out_channels; }
  void Validate() const;
};

struct ExtractorConfig {
  int d_coarse = 48;  // divisible by 4 and 6 so 2D and 3D encodings both fit
  int d_fine = 16;
  std::array<int, 3> stage_channels{8, 16, 32};
  bool nonlinearity = true;
};

/// He-initialized weights, deterministic in seed; biases zero.
ExtractorWeights random_extractor_weights(int ndim, const ExtractorConfig& cfg, std::uint64_t seed);

struct FeaturePair {
  FeatureMap coarse;
  FeatureMap fine;
};

FeaturePair extract_features(const Frame2D& frame, const ExtractorWeights& weights);
FeaturePair extract_features(const Volume3D& volume, const ExtractorWeights& weights);

/// Sinusoidal encoding, one channel block per axis of interleaved (sin, cos) pairs.
/// Returns cells x channels in the same x-fastest cell order as FeatureMap.
Eigen::MatrixXd positional_encoding(int ndim, const GridIndex& grid_dims, int channels);

TokenSequence tokenize(const FeatureMap& fm, bool add_pe);
/// Inverse of tokenize with add_pe off: rebuilds the grid from index_map.
FeatureMap untokenize(const TokenSequence& ts);

/// Descriptors that are a fixed function of volume-space millimeter position, shared across
/// modalities. The inner product of two descriptors is a separable, shift-invariant kernel
/// sum_a k(x_a - y_a) with k Gaussian-shaped of width `width_mm` and period `period_mm`,
/// scaled so every descriptor has squared norm `gain`.
struct OracleDescriptorConfig {
  double coarse_width_mm = 24.0;
  double fine_width_mm = 12.0;
  double period_mm = 0.0;  // 0: twice the largest volume extent
  double gain = 5.0;
};

/// Channel count used for a given width and period (six channels per frequency).
int oracle_channels(double width_mm, double period_mm);

Eigen::MatrixXd oracle_descriptors(const std::vector<Vec3>& positions_mm, double width_mm, double period_mm,
                                   double gain);

/// Oracle feature pair for a frame placed by `frame_to_volume`.
FeaturePair oracle_features(const Frame2D& frame, const RigidPose& frame_to_volume,
                            const OracleDescriptorConfig& cfg, double period_mm);
FeaturePair oracle_features(const Volume3D& volume, const OracleDescriptorConfig& cfg, double period_mm);

void append_tensors(const ExtractorWeights& w, const std::string& prefix, TensorBundle& bundle);
ExtractorWeights extractor_from_bundle(const TensorBundle& bundle, const std::string& prefix);

void write_extractor_weights(const std::filesystem::path& path, const ExtractorWeights& w);
ExtractorWeights read_extractor_weights(const std::filesystem::path& path);

}  // namespace s2v
