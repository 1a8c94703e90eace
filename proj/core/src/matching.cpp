#include "s2v/matching.hpp"

#include "s2v/grid_io.hpp"
#include "s2v/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace s2v {

double MatchSet::total_weight() const {
  double s = 0.0;
  for (const auto& p : pairs) s += p.weight;
  return s;
}

std::vector<Vec3> token_positions(const TokenSequence& ts) {
  std::vector<Vec3> out(static_cast<std::size_t>(ts.size()));
  for (int t = 0; t < ts.size(); ++t) out[static_cast<std::size_t>(t)] = ts.position_mm(t);
  return out;
}

ConfidenceMatrix score_matrix(const Eigen::MatrixXd& us_tokens, const Eigen::MatrixXd& ct_tokens, double temperature) {
  if (!(temperature > 0.0)) throw ValidationError("score temperature must be positive");
  if (us_tokens.cols() != ct_tokens.cols()) throw ValidationError("US and CT tokens must share a dimension");
  ConfidenceMatrix cm;
  cm.temperature = temperature;
  cm.scores.noalias() = us_tokens * ct_tokens.transpose();
  cm.scores /= temperature;
  return cm;
}

ConfidenceMatrix score_matrix(const TokenSequence& us_tokens, const TokenSequence& ct_tokens, double temperature) {
  return score_matrix(us_tokens.tokens, ct_tokens.tokens, temperature);
}

Eigen::MatrixXd row_softmax(const Eigen::MatrixXd& s) {
  Eigen::MatrixXd out(s.rows(), s.cols());
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const double m = s.row(i).maxCoeff();
    out.row(i) = (s.row(i).array() - m).exp();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

Eigen::MatrixXd col_softmax(const Eigen::MatrixXd& s) {
  Eigen::MatrixXd out(s.rows(), s.cols());
  for (Eigen::Index j = 0; j < s.cols(); ++j) {
    const double m = s.col(j).maxCoeff();
    out.col(j) = (s.col(j).array() - m).exp();
    out.col(j) /= out.col(j).sum();
  }
  return out;
}

ConfidenceMatrix dual_softmax(ConfidenceMatrix cm) {
  if (!cm.scores.allFinite()) throw ValidationError("scores must be finite");
  cm.probs = row_softmax(cm.scores).cwiseProduct(col_softmax(cm.scores));
  return cm;
}

Eigen::MatrixXd gumbel_noise(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  Eigen::MatrixXd g(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    for (Eigen::Index j = 0; j < cols; ++j) g(i, j) = gumbel01(rng);
  }
  return g;
}

GumbelSample gumbel_sample(const ConfidenceMatrix& cm, std::span<const Vec3> us_positions,
                           std::span<const Vec3> ct_positions, const GumbelOptions& opts) {
  const Eigen::MatrixXd noise = opts.add_noise ? gumbel_noise(cm.probs.rows(), cm.probs.cols(), opts.seed)
                                               : Eigen::MatrixXd::Zero(cm.probs.rows(), cm.probs.cols());
  return gumbel_sample_with_noise(cm, us_positions, ct_positions, noise, opts);
}

GumbelSample gumbel_sample_with_noise(const ConfidenceMatrix& cm, std::span<const Vec3> us_positions,
                                      std::span<const Vec3> ct_positions, const Eigen::MatrixXd& noise,
                                      const GumbelOptions& opts) {
  if (!(opts.tau > 0.0)) throw ValidationError("Gumbel temperature must be positive");
  if (!cm.has_probs()) throw ValidationError("confidence matrix has no probabilities");
  const Eigen::Index n = cm.probs.rows();
  const Eigen::Index m = cm.probs.cols();
  if (static_cast<Eigen::Index>(us_positions.size()) != n || static_cast<Eigen::Index>(ct_positions.size()) != m)
    throw ValidationError("position lists do not match the confidence matrix");
  if (opts.add_noise && (noise.rows() != n || noise.cols() != m)) throw ValidationError("noise shape mismatch");

  GumbelSample out;
  out.matches.kind = MatchKind::kSoft;
  std::vector<Eigen::VectorXd> kept;
  Eigen::VectorXd z(m);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (cm.probs.row(i).maxCoeff() < opts.min_row_confidence) continue;
    for (Eigen::Index j = 0; j < m; ++j) {
      z[j] = (std::log(cm.probs(i, j) + kGumbelEps) + (opts.add_noise ? noise(i, j) : 0.0)) / opts.tau;
    }
    Eigen::Index best = 0;
    const double zmax = z.maxCoeff(&best);
    Eigen::VectorXd y = (z.array() - zmax).exp();
    y /= y.sum();
    // Subnormal weights would keep the low-tau limit from landing exactly on a grid position.
    for (Eigen::Index j = 0; j < m; ++j)
      if (y[j] < std::numeric_limits<double>::min()) y[j] = 0.0;

    Match match;
    match.us_point = us_positions[static_cast<std::size_t>(i)];
    match.us_token = static_cast<int>(i);
    if (opts.straight_through) {
      match.ct_point = ct_positions[static_cast<std::size_t>(best)];
      match.weight = cm.probs(i, best);
    } else {
      for (Eigen::Index j = 0; j < m; ++j) {
        match.ct_point += y[j] * ct_positions[static_cast<std::size_t>(j)];
        match.weight += y[j] * cm.probs(i, j);
      }
    }
    out.matches.pairs.push_back(match);
    out.rows.push_back(static_cast<int>(i));
    kept.push_back(std::move(y));
  }
  out.y.resize(static_cast<Eigen::Index>(kept.size()), m);
  for (std::size_t r = 0; r < kept.size(); ++r) out.y.row(static_cast<Eigen::Index>(r)) = kept[r].transpose();
  return out;
}

MatchSet hard_matches(const ConfidenceMatrix& cm, double threshold, std::span<const Vec3> us_positions,
                      std::span<const Vec3> ct_positions) {
  if (!cm.has_probs()) throw ValidationError("confidence matrix has no probabilities");
  const Eigen::Index n = cm.probs.rows();
  const Eigen::Index m = cm.probs.cols();
  if (static_cast<Eigen::Index>(us_positions.size()) != n || static_cast<Eigen::Index>(ct_positions.size()) != m)
    throw ValidationError("position lists do not match the confidence matrix");

  std::vector<Eigen::Index> col_best(static_cast<std::size_t>(m));
  for (Eigen::Index j = 0; j < m; ++j) cm.probs.col(j).maxCoeff(&col_best[static_cast<std::size_t>(j)]);

  MatchSet out;
  out.kind = MatchKind::kHard;
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index j = 0;
    const double p = cm.probs.row(i).maxCoeff(&j);
    if (p < threshold || col_best[static_cast<std::size_t>(j)] != i) continue;
    Match match;
    match.us_point = us_positions[static_cast<std::size_t>(i)];
    match.ct_point = ct_positions[static_cast<std::size_t>(j)];
    match.weight = p;
    match.us_token = static_cast<int>(i);
    match.ct_token = static_cast<int>(j);
    out.pairs.push_back(match);
  }
  return out;
}

namespace {

void require_inside(const FeatureMap& fm, const Vec3& mm, const char* what) {
  for (int a = 0; a < fm.ndim; ++a) {
    const double g = mm[a] / (fm.scale * fm.input_spacing[a]);
    if (!(g >= -0.5 && g <= fm.grid_dims[a] - 0.5))
      throw ValidationError(std::string(what) + " point lies outside its fine grid");
  }
}

}  // namespace

Vec3 fine_refine(const Match& match, const FeatureMap& fine_us, const FeatureMap& fine_ct,
                 const FineRefineOptions& opts) {
  if (opts.window < 3 || opts.window % 2 == 0) throw ValidationError("refinement window must be odd and >= 3");
  if (!(opts.temperature > 0.0)) throw ValidationError("refinement temperature must be positive");
  for (int a = 0; a < fine_ct.ndim; ++a)
    if (opts.window > fine_ct.grid_dims[a]) throw ValidationError("refinement window exceeds the CT fine grid");
  if (fine_us.channels() != fine_ct.channels()) throw ValidationError("fine descriptors must share a dimension");
  require_inside(fine_us, match.us_point, "US");
  require_inside(fine_ct, match.ct_point, "CT");

  const auto us_descriptor = fine_us.data.row(fine_us.cell(fine_us.nearest_cell(match.us_point)));
  const GridIndex center = fine_ct.nearest_cell(match.ct_point);
  const int r = opts.window / 2;

  GridIndex lo{0, 0, 0}, hi{0, 0, 0};
  for (int a = 0; a < 3; ++a) {
    const int radius = a < fine_ct.ndim ? r : 0;
    lo[a] = std::max(0, center[a] - radius);
    hi[a] = std::min(fine_ct.grid_dims[a] - 1, center[a] + radius);
  }

  std::vector<double> logits;
  std::vector<Vec3> positions;
  for (int z = lo[2]; z <= hi[2]; ++z)
    for (int y = lo[1]; y <= hi[1]; ++y)
      for (int x = lo[0]; x <= hi[0]; ++x) {
        const GridIndex g{x, y, z};
        logits.push_back(us_descriptor.dot(fine_ct.data.row(fine_ct.cell(g))) / opts.temperature);
        positions.push_back(fine_ct.position_mm(g));
      }
  const double lmax = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  Vec3 expectation = Vec3::Zero();
  for (std::size_t k = 0; k < logits.size(); ++k) {
    const double w = std::exp(logits[k] - lmax);
    total += w;
    expectation += w * positions[k];
  }
  expectation /= total;

  Vec3 refined = match.ct_point;
  for (int a = 0; a < fine_ct.ndim; ++a) {
    const double bound = r * fine_ct.scale * fine_ct.input_spacing[a];
    refined[a] = std::clamp(expectation[a], match.ct_point[a] - bound, match.ct_point[a] + bound);
  }
  return refined;
}

MatchSet fine_refine_all(const MatchSet& matches, const FeatureMap& fine_us, const FeatureMap& fine_ct,
                         const FineRefineOptions& opts) {
  MatchSet out = matches;
  for (auto& m : out.pairs) m.ct_point = fine_refine(m, fine_us, fine_ct, opts);
  return out;
}

Eigen::MatrixXd gumbel_backward(const ConfidenceMatrix& cm, const GumbelSample& sample,
                                std::span<const Vec3> ct_positions, const MatchGradient& grad,
                                const GumbelOptions& opts) {
  const Eigen::Index m = cm.probs.cols();
  Eigen::MatrixXd g_probs = Eigen::MatrixXd::Zero(cm.probs.rows(), m);
  Eigen::VectorXd g_y(m);
  for (std::size_t r = 0; r < sample.rows.size(); ++r) {
    const Eigen::Index i = sample.rows[r];
    const auto y = sample.y.row(static_cast<Eigen::Index>(r));
    const Vec3& g_ct = grad.ct_point[r];
    const double g_w = grad.weight[r];
    for (Eigen::Index j = 0; j < m; ++j) {
      g_y[j] = g_ct.dot(ct_positions[static_cast<std::size_t>(j)]) + g_w * cm.probs(i, j);
      g_probs(i, j) += g_w * y[j];
    }
    const double mean = y.dot(g_y);
    for (Eigen::Index j = 0; j < m; ++j) {
      const double g_z = y[j] * (g_y[j] - mean);
      g_probs(i, j) += g_z / (opts.tau * (cm.probs(i, j) + kGumbelEps));
    }
  }
  return g_probs;
}

Eigen::MatrixXd dual_softmax_backward(const ConfidenceMatrix& cm, const Eigen::MatrixXd& grad_probs) {
  const Eigen::MatrixXd a = row_softmax(cm.scores);
  const Eigen::MatrixXd b = col_softmax(cm.scores);
  const Eigen::MatrixXd g_a = grad_probs.cwiseProduct(b);
  const Eigen::MatrixXd g_b = grad_probs.cwiseProduct(a);
  const Eigen::VectorXd row_dot = a.cwiseProduct(g_a).rowwise().sum();
  const Eigen::RowVectorXd col_dot = b.cwiseProduct(g_b).colwise().sum();
  Eigen::MatrixXd g_s = a.cwiseProduct(g_a.colwise() - row_dot);
  g_s += b.cwiseProduct(g_b.rowwise() - col_dot);
  return g_s;
}

TokenGradient score_backward(const Eigen::MatrixXd& us_tokens, const Eigen::MatrixXd& ct_tokens, double temperature,
                             const Eigen::MatrixXd& grad_scores) {
  TokenGradient g;
  g.us = grad_scores * ct_tokens / temperature;
  g.ct = grad_scores.transpose() * us_tokens / temperature;
  return g;
}

void write_matches_csv(const std::filesystem::path& path, const MatchSet& matches) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "us_x,us_y,us_z,ct_x,ct_y,ct_z,weight\n";
  out << std::setprecision(17);
  for (const auto& p : matches.pairs) {
    out << p.us_point.x() << ',' << p.us_point.y() << ',' << p.us_point.z() << ',' << p.ct_point.x() << ','
        << p.ct_point.y() << ',' << p.ct_point.z() << ',' << p.weight << '\n';
  }
}

MatchSet read_matches_csv(const std::filesystem::path& path, MatchKind kind) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  if (line.rfind("us_x,us_y,us_z,ct_x,ct_y,ct_z,weight", 0) != 0) throw ValidationError("unexpected match CSV header");
  MatchSet out;
  out.kind = kind;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    double v[7];
    for (double& x : v) {
      if (!std::getline(ss, cell, ',')) throw ValidationError("short match CSV row");
      x = std::stod(cell);
    }
    Match m;
    m.us_point = Vec3(v[0], v[1], v[2]);
    m.ct_point = Vec3(v[3], v[4], v[5]);
    m.weight = v[6];
    if (!std::isfinite(m.weight) || m.weight < 0.0 || m.weight > 1.0)
      throw ValidationError("match weights must lie in [0, 1]");
    out.pairs.push_back(m);
  }
  return out;
}

void write_confidence(const std::filesystem::path& stem, const ConfidenceMatrix& cm) {
  const int dims[2] = {static_cast<int>(cm.scores.cols()), static_cast<int>(cm.scores.rows())};
  const double spacing[2] = {1.0, 1.0};
  // Eigen is column-major; transposing to row-major puts the CT index fastest.
  auto flatten = [](const Eigen::MatrixXd& m) {
    std::vector<float> v;
    v.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) v.push_back(static_cast<float>(m(i, j)));
    return v;
  };
  auto with_suffix = [&](const char* suffix) {
    std::filesystem::path p = stem;
    p += suffix;
    return p;
  };
  write_raw_grid(with_suffix("_scores.json"), dims, spacing, flatten(cm.scores));
  if (cm.has_probs()) write_raw_grid(with_suffix("_probs.json"), dims, spacing, flatten(cm.probs));
}

}  // namespace s2v
