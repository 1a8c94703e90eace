#pragma once

#include "s2v/harness/config.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace s2v::harness {

/// One differentiable chain tokens -> scores -> dual softmax -> Gumbel sample -> DWP -> loss,
/// with the Gumbel noise held fixed.
struct ChainInstance {
  Eigen::MatrixXd us_tokens;  // n x d
  Eigen::MatrixXd ct_tokens;  // m x d
  double temperature = 1.0;
  std::vector<Vec3> us_positions;
  std::vector<Vec3> ct_positions;
  Eigen::MatrixXd noise;  // n x m
  GumbelOptions gumbel;
  RigidPose gt;
  PoseLossConfig loss;
};

struct ChainGradients {
  double loss = 0.0;
  Eigen::MatrixXd us_tokens;
  Eigen::MatrixXd ct_tokens;
  Eigen::MatrixXd scores;
  Eigen::MatrixXd probs;
  MatchGradient matches;
  GumbelSample sample;
  ConfidenceMatrix cm;
};

double chain_loss(const ChainInstance& inst);
/// Analytic gradients for every stage input. Throws DegenerateConfiguration or
/// IllConditionedGradient when the pose solve or its derivative is undefined.
ChainGradients chain_gradients(const ChainInstance& inst);

/// Random instance with partially aligned tokens so the soft matches are informative.
ChainInstance random_chain_instance(std::uint64_t seed);

struct StageCheck {
  std::string name;
  double max_rel_error = 0.0;
  long entries = 0;
};

struct GradcheckReport {
  std::uint64_t seed = 0;
  int instances = 0;
  int resampled = 0;  // degenerate or ill-conditioned draws replaced by fresh ones
  double tolerance = 1e-3;
  double perfect_fit_max_grad = 0.0;  // largest analytic gradient entry on the zero-loss instance
  std::vector<StageCheck> stages;     // score, dual_softmax, gumbel, dwp
  bool passed = false;

  nlohmann::json to_json() const;
};

/// Compares analytic gradients with Richardson-extrapolated central differences stage by stage. Entry error is
/// |a - n| / max(|a|, |n|, 1e-6). Probabilities are perturbed in log space and compared as
/// p * dL/dp. Instance 0 is a perfect fit (gt equal to the chain's own estimate).
GradcheckReport gradcheck(std::uint64_t seed, const GradcheckSettings& settings);

}  // namespace s2v::harness
