#pragma once

#include "s2v/features.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace s2v {

/// Score matrix S(i, j) = <us_i, ct_j> / temperature and its dual-softmax probabilities.
struct ConfidenceMatrix {
  Eigen::MatrixXd scores;  // N_us x N_ct
  Eigen::MatrixXd probs;   // empty until dual_softmax
  double temperature = 1.0;

  bool has_probs() const { return probs.size() == scores.size() && probs.size() > 0; }
};

enum class MatchKind { kSoft, kHard };

struct Match {
  Vec3 us_point = Vec3::Zero();  // frame mm
  Vec3 ct_point = Vec3::Zero();  // volume mm
  double weight = 0.0;
  int us_token = -1;
  int ct_token = -1;  // hard matches only
};

struct MatchSet {
  std::vector<Match> pairs;
  MatchKind kind = MatchKind::kSoft;

  std::size_t size() const { return pairs.size(); }
  double total_weight() const;
};

std::vector<Vec3> token_positions(const TokenSequence& ts);

ConfidenceMatrix score_matrix(const TokenSequence& us_tokens, const TokenSequence& ct_tokens, double temperature);
ConfidenceMatrix score_matrix(const Eigen::MatrixXd& us_tokens, const Eigen::MatrixXd& ct_tokens, double temperature);

/// Fills probs(i, j) = softmax_j(S(i, .)) * softmax_i(S(., j)).
ConfidenceMatrix dual_softmax(ConfidenceMatrix cm);

Eigen::MatrixXd row_softmax(const Eigen::MatrixXd& s);
Eigen::MatrixXd col_softmax(const Eigen::MatrixXd& s);

struct GumbelOptions {
  double tau = 0.5;
  std::uint64_t seed = 0;
  bool add_noise = true;
  /// Rows whose max probability falls below this are left out of the match set.
  double min_row_confidence = 0.01;
  /// Forward uses the hard argmax position; gradients still use the soft relaxation.
  bool straight_through = false;
};

/// Soft matches plus what the backward pass needs.
struct GumbelSample {
  MatchSet matches;
  std::vector<int> rows;  // source row of each match
  Eigen::MatrixXd y;      // relaxed one-hot per kept row, rows.size() x N_ct
};

inline constexpr double kGumbelEps = 1e-12;

/// i.i.d. Gumbel(0, 1) noise with one stream per row, derived from (seed, row).
Eigen::MatrixXd gumbel_noise(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed);

GumbelSample gumbel_sample(const ConfidenceMatrix& cm, std::span<const Vec3> us_positions,
                           std::span<const Vec3> ct_positions, const GumbelOptions& opts);
/// Same as gumbel_sample with explicit noise (ignored when opts.add_noise is false).
GumbelSample gumbel_sample_with_noise(const ConfidenceMatrix& cm, std::span<const Vec3> us_positions,
                                      std::span<const Vec3> ct_positions, const Eigen::MatrixXd& noise,
                                      const GumbelOptions& opts);

/// Mutual-nearest-neighbor pairs with probs >= threshold.
MatchSet hard_matches(const ConfidenceMatrix& cm, double threshold, std::span<const Vec3> us_positions,
                      std::span<const Vec3> ct_positions);

struct FineRefineOptions {
  int window = 5;
  double temperature = 1.0;
};

/// Expectation of CT fine-grid positions in a window around the match under the softmax of
/// fine-descriptor correlations. The result moves at most (window/2) fine cells per axis.
Vec3 fine_refine(const Match& match, const FeatureMap& fine_us, const FeatureMap& fine_ct,
                 const FineRefineOptions& opts);
MatchSet fine_refine_all(const MatchSet& matches, const FeatureMap& fine_us, const FeatureMap& fine_ct,
                         const FineRefineOptions& opts);

// Backward passes for the differentiable chain scores -> probs -> soft matches.

/// Gradients of a scalar loss with respect to each soft match.
struct MatchGradient {
  std::vector<double> weight;
  std::vector<Vec3> us_point;
  std::vector<Vec3> ct_point;
};

/// dL/dprobs from dL/d(match weight, match ct_point).
Eigen::MatrixXd gumbel_backward(const ConfidenceMatrix& cm, const GumbelSample& sample,
                                std::span<const Vec3> ct_positions, const MatchGradient& grad,
                                const GumbelOptions& opts);
/// dL/dscores from dL/dprobs.
Eigen::MatrixXd dual_softmax_backward(const ConfidenceMatrix& cm, const Eigen::MatrixXd& grad_probs);

struct TokenGradient {
  Eigen::MatrixXd us;
  Eigen::MatrixXd ct;
};
TokenGradient score_backward(const Eigen::MatrixXd& us_tokens, const Eigen::MatrixXd& ct_tokens, double temperature,
                             const Eigen::MatrixXd& grad_scores);

// MatchSet file: CSV "us_x,us_y,us_z,ct_x,ct_y,ct_z,weight" in mm.
void write_matches_csv(const std::filesystem::path& path, const MatchSet& matches);
MatchSet read_matches_csv(const std::filesystem::path& path, MatchKind kind = MatchKind::kSoft);

/// Writes scores and probs as 2D raw grids (<stem>_scores, <stem>_probs), CT index fastest.
void write_confidence(const std::filesystem::path& stem, const ConfidenceMatrix& cm);

}  // namespace s2v
