#include "s2v/attention.hpp"

#include "s2v/rng.hpp"

#include <cmath>
#include <string>

namespace s2v {

namespace {

constexpr double kMinDenominator = 1e-20;

Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, double scale, Rng& rng) {
  Eigen::MatrixXd m(rows, cols);
  const double std_dev = scale * std::sqrt(2.0 / static_cast<double>(rows + cols));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std_dev * normal01(rng);
  return m;
}

Eigen::MatrixXd normalize_tokens(const Eigen::MatrixXd& x) {
  Eigen::MatrixXd out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mean = x.row(i).mean();
    const double var = (x.row(i).array() - mean).square().mean();
    out.row(i) = (x.row(i).array() - mean) / std::sqrt(var + 1e-5);
  }
  return out;
}

}  // namespace

void AttentionWeights::Validate() const {
  if (dim < 1) throw ValidationError("attention dim must be positive");
  if (n_f < 0) throw ValidationError("N_f must be non-negative");
  if (heads < 1 || dim % heads != 0) throw ValidationError("heads must divide the token dimension");
  if (layers.size() != static_cast<std::size_t>(4 * n_f)) throw ValidationError("attention layer count must be 4 * N_f");
  for (const auto& l : layers) {
    for (const Eigen::MatrixXd* m : {&l.wq, &l.wk, &l.wv, &l.wo})
      if (m->rows() != dim || m->cols() != dim) throw ValidationError("attention projections must be d x d");
    if (l.ff1.cols() != dim || l.ff2.rows() != dim || l.ff1.rows() != l.ff2.cols() ||
        l.ff1_bias.size() != l.ff1.rows() || l.ff2_bias.size() != dim)
      throw ValidationError("inconsistent feed-forward shapes");
  }
}

AttentionWeights random_attention_weights(int dim, const AttentionConfig& cfg, std::uint64_t seed) {
  AttentionWeights w = zero_attention_weights(dim, cfg);
  Rng rng(derive_seed(seed, 0xa77e));
  for (auto& l : w.layers) {
    l.wq = random_matrix(dim, dim, cfg.init_scale, rng);
    l.wk = random_matrix(dim, dim, cfg.init_scale, rng);
    l.wv = random_matrix(dim, dim, cfg.init_scale, rng);
    l.wo = random_matrix(dim, dim, cfg.init_scale, rng);
    l.ff1 = random_matrix(l.ff1.rows(), dim, cfg.init_scale, rng);
    l.ff2 = random_matrix(dim, l.ff2.cols(), cfg.init_scale, rng);
  }
  return w;
}

AttentionWeights zero_attention_weights(int dim, const AttentionConfig& cfg) {
  AttentionWeights w;
  w.dim = dim;
  w.heads = cfg.heads;
  w.n_f = cfg.n_f;
  w.token_norm = cfg.token_norm;
  const int hidden = cfg.ff_hidden_factor * dim;
  AttentionLayerWeights zero;
  zero.wq = zero.wk = zero.wv = zero.wo = Eigen::MatrixXd::Zero(dim, dim);
  zero.ff1 = Eigen::MatrixXd::Zero(hidden, dim);
  zero.ff1_bias = Eigen::VectorXd::Zero(hidden);
  zero.ff2 = Eigen::MatrixXd::Zero(dim, hidden);
  zero.ff2_bias = Eigen::VectorXd::Zero(dim);
  w.layers.assign(static_cast<std::size_t>(4 * cfg.n_f), zero);
  w.Validate();
  return w;
}

Eigen::MatrixXd linear_attention(const Eigen::MatrixXd& queries, const Eigen::MatrixXd& keys,
                                 const Eigen::MatrixXd& values) {
  const Eigen::Index d = queries.cols();
  if (d < 1 || keys.cols() != d) throw ValidationError("queries and keys must share a positive dimension");
  if (keys.rows() != values.rows()) throw ValidationError("keys and values must have equal counts");
  if (keys.rows() < 1) throw ValidationError("attention needs at least one key");

  // Pass over keys: KV = sum_j phi(k_j) v_j^T, Z = sum_j phi(k_j).
  Eigen::MatrixXd kv = Eigen::MatrixXd::Zero(d, values.cols());
  Eigen::VectorXd z = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd phi(d);
  for (Eigen::Index j = 0; j < keys.rows(); ++j) {
    for (Eigen::Index c = 0; c < d; ++c) phi[c] = elu_feature(keys(j, c));
    kv.noalias() += phi * values.row(j);
    z += phi;
  }

  Eigen::MatrixXd out(queries.rows(), values.cols());
  for (Eigen::Index i = 0; i < queries.rows(); ++i) {
    for (Eigen::Index c = 0; c < d; ++c) phi[c] = elu_feature(queries(i, c));
    const double denom = phi.dot(z);
    if (!(denom >= kMinDenominator)) throw std::runtime_error("linear attention denominator underflow");
    out.row(i) = (phi.transpose() * kv) / denom;
  }
  return out;
}

Eigen::MatrixXd multihead_linear_attention(const Eigen::MatrixXd& queries, const Eigen::MatrixXd& keys,
                                           const Eigen::MatrixXd& values, int heads) {
  const Eigen::Index d = queries.cols();
  if (heads < 1 || d % heads != 0) throw ValidationError("heads must divide the token dimension");
  if (heads == 1) return linear_attention(queries, keys, values);
  const Eigen::Index hd = d / heads;
  Eigen::MatrixXd out(queries.rows(), d);
  for (int h = 0; h < heads; ++h) {
    out.middleCols(h * hd, hd) =
        linear_attention(queries.middleCols(h * hd, hd), keys.middleCols(h * hd, hd), values.middleCols(h * hd, hd));
  }
  return out;
}

Eigen::MatrixXd attention_layer(const Eigen::MatrixXd& x, const Eigen::MatrixXd& source,
                                const AttentionLayerWeights& w, int heads, bool token_norm) {
  const Eigen::MatrixXd q = x * w.wq.transpose();
  const Eigen::MatrixXd k = source * w.wk.transpose();
  const Eigen::MatrixXd v = source * w.wv.transpose();
  Eigen::MatrixXd message = multihead_linear_attention(q, k, v, heads) * w.wo.transpose();
  if (token_norm) message = normalize_tokens(message);
  Eigen::MatrixXd y = x + message;

  Eigen::MatrixXd hidden = y * w.ff1.transpose();
  hidden.rowwise() += w.ff1_bias.transpose();
  hidden = hidden.cwiseMax(0.0);
  Eigen::MatrixXd ff = hidden * w.ff2.transpose();
  ff.rowwise() += w.ff2_bias.transpose();
  if (token_norm) ff = normalize_tokens(ff);
  return y + ff;
}

std::pair<TokenSequence, TokenSequence> loftr_transform(const TokenSequence& us_tokens,
                                                        const TokenSequence& ct_tokens,
                                                        const AttentionWeights& weights) {
  if (us_tokens.dim() != ct_tokens.dim()) throw ValidationError("US and CT tokens must share a dimension");
  TokenSequence us = us_tokens;
  TokenSequence ct = ct_tokens;
  if (weights.n_f == 0) return {std::move(us), std::move(ct)};
  if (weights.dim != us.dim()) throw ValidationError("attention weights do not match token dimension");
  weights.Validate();

  for (int rep = 0; rep < weights.n_f; ++rep) {
    const auto& layer = [&](LayerRole r) -> const AttentionLayerWeights& {
      return weights.layers[static_cast<std::size_t>(4 * rep + static_cast<int>(r))];
    };
    us.tokens = attention_layer(us.tokens, us.tokens, layer(LayerRole::kUsSelf), weights.heads, weights.token_norm);
    ct.tokens = attention_layer(ct.tokens, ct.tokens, layer(LayerRole::kCtSelf), weights.heads, weights.token_norm);
    us.tokens = attention_layer(us.tokens, ct.tokens, layer(LayerRole::kUsFromCt), weights.heads, weights.token_norm);
    ct.tokens = attention_layer(ct.tokens, us.tokens, layer(LayerRole::kCtFromUs), weights.heads, weights.token_norm);
  }
  return {std::move(us), std::move(ct)};
}

namespace {

NamedTensor matrix_tensor(const std::string& name, const Eigen::MatrixXd& m) {
  NamedTensor t;
  t.name = name;
  t.shape = {static_cast<int>(m.rows()), static_cast<int>(m.cols())};
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) t.values.push_back(static_cast<float>(m(r, c)));
  return t;
}

Eigen::MatrixXd tensor_matrix(const NamedTensor& t) {
  if (t.shape.size() == 1) {
    Eigen::MatrixXd v(t.shape[0], 1);
    for (int i = 0; i < t.shape[0]; ++i) v(i, 0) = t.values[static_cast<std::size_t>(i)];
    return v;
  }
  if (t.shape.size() != 2) throw ValidationError("expected a matrix tensor: " + t.name);
  Eigen::MatrixXd m(t.shape[0], t.shape[1]);
  for (int r = 0; r < t.shape[0]; ++r)
    for (int c = 0; c < t.shape[1]; ++c) m(r, c) = t.values[static_cast<std::size_t>(r) * t.shape[1] + c];
  return m;
}

}  // namespace

void append_tensors(const AttentionWeights& w, const std::string& prefix, TensorBundle& bundle) {
  bundle.meta[prefix + "dim"] = w.dim;
  bundle.meta[prefix + "heads"] = w.heads;
  bundle.meta[prefix + "n_f"] = w.n_f;
  bundle.meta[prefix + "token_norm"] = w.token_norm;
  for (std::size_t i = 0; i < w.layers.size(); ++i) {
    const auto& l = w.layers[i];
    const std::string p = prefix + "layer" + std::to_string(i) + ".";
    bundle.tensors.push_back(matrix_tensor(p + "wq", l.wq));
    bundle.tensors.push_back(matrix_tensor(p + "wk", l.wk));
    bundle.tensors.push_back(matrix_tensor(p + "wv", l.wv));
    bundle.tensors.push_back(matrix_tensor(p + "wo", l.wo));
    bundle.tensors.push_back(matrix_tensor(p + "ff1", l.ff1));
    bundle.tensors.push_back(matrix_tensor(p + "ff2", l.ff2));
    NamedTensor b1 = matrix_tensor(p + "ff1_bias", l.ff1_bias);
    b1.shape = {static_cast<int>(l.ff1_bias.size())};
    NamedTensor b2 = matrix_tensor(p + "ff2_bias", l.ff2_bias);
    b2.shape = {static_cast<int>(l.ff2_bias.size())};
    bundle.tensors.push_back(std::move(b1));
    bundle.tensors.push_back(std::move(b2));
  }
}

AttentionWeights attention_from_bundle(const TensorBundle& bundle, const std::string& prefix) {
  AttentionWeights w;
  w.dim = bundle.meta.at(prefix + "dim").get<int>();
  w.heads = bundle.meta.value(prefix + "heads", 1);
  w.n_f = bundle.meta.at(prefix + "n_f").get<int>();
  w.token_norm = bundle.meta.value(prefix + "token_norm", false);
  for (int i = 0; i < 4 * w.n_f; ++i) {
    const std::string p = prefix + "layer" + std::to_string(i) + ".";
    AttentionLayerWeights l;
    l.wq = tensor_matrix(bundle.get(p + "wq"));
    l.wk = tensor_matrix(bundle.get(p + "wk"));
    l.wv = tensor_matrix(bundle.get(p + "wv"));
    l.wo = tensor_matrix(bundle.get(p + "wo"));
    l.ff1 = tensor_matrix(bundle.get(p + "ff1"));
    l.ff2 = tensor_matrix(bundle.get(p + "ff2"));
    l.ff1_bias = tensor_matrix(bundle.get(p + "ff1_bias")).col(0);
    l.ff2_bias = tensor_matrix(bundle.get(p + "ff2_bias")).col(0);
    w.layers.push_back(std::move(l));
  }
  w.Validate();
  return w;
}

void write_attention_weights(const std::filesystem::path& path, const AttentionWeights& w) {
  TensorBundle bundle;
  append_tensors(w, "", bundle);
  write_tensor_bundle(path, bundle);
}

AttentionWeights read_attention_weights(const std::filesystem::path& path) {
  return attention_from_bundle(read_tensor_bundle(path), "");
}

}  // namespace s2v
