#pragma once

#include "s2v/features.hpp"
#include "s2v/tensor_bundle.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

namespace s2v {

/// One attention sublayer followed by its feed-forward sublayer. Matrices act on row tokens:
/// q = x * wq^T, etc.
struct AttentionLayerWeights {
  Eigen::MatrixXd wq, wk, wv, wo;  // d x d
  Eigen::MatrixXd ff1;             // hidden x d
  Eigen::VectorXd ff1_bias;        // hidden
  Eigen::MatrixXd ff2;             // d x hidden
  Eigen::VectorXd ff2_bias;        // d
};

/// Layers are stored four per repetition, in execution order:
/// US self, CT self, US <- CT cross, CT <- US cross.
struct AttentionWeights {
  int dim = 0;
  int heads = 1;
  int n_f = 0;
  bool token_norm = false;
  std::vector<AttentionLayerWeights> layers;

  void Validate() const;
};

enum class LayerRole { kUsSelf = 0, kCtSelf = 1, kUsFromCt = 2, kCtFromUs = 3 };

struct AttentionConfig {
  int n_f = 2;
  int heads = 1;
  int ff_hidden_factor = 2;
  bool token_norm = false;
  double init_scale = 1.0;  // multiplies the Xavier-style init
};

AttentionWeights random_attention_weights(int dim, const AttentionConfig& cfg, std::uint64_t seed);
AttentionWeights zero_attention_weights(int dim, const AttentionConfig& cfg);

/// elu(x) + 1, the positive kernel feature map.
inline double elu_feature(double x) { return x > 0.0 ? x + 1.0 : std::exp(x); }

/// Kernelized attention out_i = phi(q_i)^T (sum_j phi(k_j) v_j^T) / (phi(q_i)^T sum_j phi(k_j)),
/// computed in one pass over keys and one over queries.
Eigen::MatrixXd linear_attention(const Eigen::MatrixXd& queries, const Eigen::MatrixXd& keys,
                                 const Eigen::MatrixXd& values);

/// Heads split the channel dimension into equal contiguous blocks.
Eigen::MatrixXd multihead_linear_attention(const Eigen::MatrixXd& queries, const Eigen::MatrixXd& keys,
                                           const Eigen::MatrixXd& values, int heads);

/// Applies one attention+feed-forward layer to `x`, attending over `source`.
Eigen::MatrixXd attention_layer(const Eigen::MatrixXd& x, const Eigen::MatrixXd& source,
                                const AttentionLayerWeights& w, int heads, bool token_norm);

std::pair<TokenSequence, TokenSequence> loftr_transform(const TokenSequence& us_tokens,
                                                        const TokenSequence& ct_tokens,
                                                        const AttentionWeights& weights);

void append_tensors(const AttentionWeights& w, const std::string& prefix, TensorBundle& bundle);
AttentionWeights attention_from_bundle(const TensorBundle& bundle, const std::string& prefix);
void write_attention_weights(const std::filesystem::path& path, const AttentionWeights& w);
AttentionWeights read_attention_weights(const std::filesystem::path& path);

}  // namespace s2v
