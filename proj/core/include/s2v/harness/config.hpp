#pragma once

#include "s2v/attention.hpp"
#include "s2v/features.hpp"
#include "s2v/geometry.hpp"
#include "s2v/matching.hpp"
#include "s2v/pose_estimation.hpp"
#include "s2v/refine_mi.hpp"
#include "s2v/volume.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace s2v::harness {

enum class FeatureMode { kOracle, kLearned };

struct DatasetConfig {
  int n_cases = 100;
  int cases_per_volume = 10;
  std::array<int, 3> volume_dims{128, 128, 128};
  std::array<double, 3> voxel_spacing_mm{1.25, 1.25, 1.25};
  std::array<int, 2> frame_dims{128, 128};
  std::array<double, 2> pixel_spacing_mm{0.5, 0.5};
  double min_rotation_deg = 0.0;
  double max_rotation_deg = 30.0;
  double max_translation_mm = 30.0;
  bool degrade = true;
  DegradeConfig degradation;
};

struct FeatureSettings {
  FeatureMode mode = FeatureMode::kOracle;
  ExtractorConfig extractor;
  bool positional_encoding = true;  // coarse scale only; ignored in oracle mode
  std::string us_weights;           // empty: random weights from seed
  std::string ct_weights;
  std::uint64_t weight_seed = 7;
  OracleDescriptorConfig oracle;
};

struct AttentionSettings {
  AttentionConfig layers;
  std::string weights;  // empty: random (learned mode) or zero (oracle mode)
  std::uint64_t weight_seed = 11;
};

struct MatchingSettings {
  double temperature = 0.02;
  double tau = 0.5;
  double threshold = 0.2;
  int window = 5;
  double fine_temperature = 0.1;
  double min_row_confidence = 0.01;
  bool straight_through = false;
  bool gumbel_noise = true;
  bool fine_refine = true;
};

struct RansacSettings {
  int iterations = 500;
  double inlier_tol_mm = 2.0;
};

struct TrainSettings {
  int iterations = 200;
  double learning_rate = 1e-2;
  int pairs = 4;
  int distractor_channels = 16;
  double distractor_scale = 1.0;
  double temperature = 1.0;
};

struct GradcheckSettings {
  int instances = 50;
  double rtol = 1e-3;
  double step = 1e-4;
};

struct Config {
  std::uint64_t seed = 0;
  DatasetConfig dataset;
  FeatureSettings features;
  AttentionSettings attention;
  MatchingSettings matching;
  RansacSettings ransac;
  MiConfig mi;
  PoseLossConfig loss;
  SuccessThreshold loose_threshold = kInitThreshold;
  SuccessThreshold strict_threshold = kNavigationThreshold;
  TrainSettings train;
  GradcheckSettings gradcheck;
  int threads = 0;  // 0: hardware concurrency

  void Validate() const;
};

nlohmann::json to_json(const DatasetConfig& cfg);
DatasetConfig dataset_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Config& cfg);
/// Missing keys keep their defaults; unknown top-level sections are rejected.
Config config_from_json(const nlohmann::json& j);
Config load_config(const std::filesystem::path& path);

}  // namespace s2v::harness
