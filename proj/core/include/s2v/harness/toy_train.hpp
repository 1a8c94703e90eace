#pragma once

#include "s2v/harness/config.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace s2v::harness {

/// Fixed synthetic pair: oracle descriptors of known positions with appended random
/// distractor channels, passed once through a small random attention stack.
struct TrainPair {
  Eigen::MatrixXd us_tokens;
  Eigen::MatrixXd ct_tokens;
  std::vector<Vec3> us_positions;
  std::vector<Vec3> ct_positions;
  RigidPose gt;
};

std::vector<TrainPair> make_train_pairs(std::uint64_t seed, const TrainSettings& settings);

struct TrainResult {
  std::vector<double> loss;  // mean pair loss per iteration, before that iteration's update
  Eigen::MatrixXd projection;
};

/// Gradient descent on a d x d projection W applied to both token sets (x -> x W^T) before
/// matching, through scores, dual softmax, Gumbel sampling and DWP. The Gumbel noise of each
/// iteration is drawn once and shared by the loss and its gradient. Throws std::runtime_error
/// when the loss becomes NaN.
TrainResult toy_train(std::uint64_t seed, const Config& cfg);

void write_loss_curve(const std::filesystem::path& path, const std::vector<double>& loss);

}  // namespace s2v::harness
