#include "s2v/harness/toy_train.hpp"

#include "s2v/rng.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace s2v::harness {

namespace {

constexpr double kCtSpacingMm = 10.0;
constexpr int kCtCells = 4;
constexpr double kUsSpacingMm = 6.0;
constexpr int kUsCells = 4;
constexpr double kDescriptorWidthMm = 8.0;
constexpr double kDescriptorPeriodMm = 80.0;
constexpr double kDescriptorGain = 5.0;
constexpr double kMaxAngleRad = 0.5;

Eigen::MatrixXd with_distractors(const Eigen::MatrixXd& base, int extra, double scale, Rng& rng) {
  Eigen::MatrixXd out(base.rows(), base.cols() + extra);
  out.leftCols(base.cols()) = base;
  for (Eigen::Index i = 0; i < base.rows(); ++i)
    for (int c = 0; c < extra; ++c) out(i, base.cols() + c) = scale * normal01(rng);
  return out;
}

}  // namespace

std::vector<TrainPair> make_train_pairs(std::uint64_t seed, const TrainSettings& settings) {
  const int dim = oracle_channels(kDescriptorWidthMm, kDescriptorPeriodMm) + settings.distractor_channels;
  AttentionConfig ac;
  ac.n_f = 1;
  ac.heads = 1;
  ac.init_scale = 0.1;
  const AttentionWeights attention = random_attention_weights(dim, ac, derive_seed(seed, 99));

  std::vector<TrainPair> pairs;
  for (int k = 0; k < settings.pairs; ++k) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(k)));
    TrainPair p;
    for (int z = 0; z < kCtCells; ++z)
      for (int y = 0; y < kCtCells; ++y)
        for (int x = 0; x < kCtCells; ++x) p.ct_positions.emplace_back(x * kCtSpacingMm, y * kCtSpacingMm, z * kCtSpacingMm);
    for (int v = 0; v < kUsCells; ++v)
      for (int u = 0; u < kUsCells; ++u) p.us_positions.emplace_back(u * kUsSpacingMm, v * kUsSpacingMm, 0.0);

    Vec3 axis(normal01(rng), normal01(rng), normal01(rng));
    axis.normalize();
    const Mat3 r = Eigen::AngleAxisd(uniform(rng, 0.0, kMaxAngleRad), axis).toRotationMatrix();
    const Vec3 us_center(0.5 * (kUsCells - 1) * kUsSpacingMm, 0.5 * (kUsCells - 1) * kUsSpacingMm, 0.0);
    const Vec3 ct_center = Vec3::Constant(0.5 * (kCtCells - 1) * kCtSpacingMm) +
                           Vec3(uniform(rng, -3.0, 3.0), uniform(rng, -3.0, 3.0), uniform(rng, -3.0, 3.0));
    p.gt.rotation = r;
    p.gt.translation = ct_center - r * us_center;

    std::vector<Vec3> us_in_ct;
    for (const auto& u : p.us_positions) us_in_ct.push_back(apply(p.gt, u));
    const Eigen::MatrixXd us_base = oracle_descriptors(us_in_ct, kDescriptorWidthMm, kDescriptorPeriodMm, kDescriptorGain);
    const Eigen::MatrixXd ct_base =
        oracle_descriptors(p.ct_positions, kDescriptorWidthMm, kDescriptorPeriodMm, kDescriptorGain);

    TokenSequence us, ct;
    us.tokens = with_distractors(us_base, settings.distractor_channels, settings.distractor_scale, rng);
    ct.tokens = with_distractors(ct_base, settings.distractor_channels, settings.distractor_scale, rng);
    std::tie(us, ct) = loftr_transform(us, ct, attention);
    p.us_tokens = us.tokens;
    p.ct_tokens = ct.tokens;
    pairs.push_back(std::move(p));
  }
  return pairs;
}

TrainResult toy_train(std::uint64_t seed, const Config& cfg) {
  const TrainSettings& ts = cfg.train;
  if (ts.iterations < 1) throw ValidationError("iterations must be >= 1");
  const auto pairs = make_train_pairs(seed, ts);
  const Eigen::Index dim = pairs.front().us_tokens.cols();

  TrainResult result;
  result.projection = Eigen::MatrixXd::Identity(dim, dim);
  GumbelOptions go;
  go.tau = cfg.matching.tau;
  go.min_row_confidence = 0.0;
  go.add_noise = cfg.matching.gumbel_noise;

  for (int it = 0; it < ts.iterations; ++it) {
    const Eigen::MatrixXd& w = result.projection;
    Eigen::MatrixXd grad_w = Eigen::MatrixXd::Zero(dim, dim);
    double loss = 0.0;
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      const TrainPair& p = pairs[k];
      const Eigen::MatrixXd us = p.us_tokens * w.transpose();
      const Eigen::MatrixXd ct = p.ct_tokens * w.transpose();
      const ConfidenceMatrix cm = dual_softmax(score_matrix(us, ct, ts.temperature));
      go.seed = derive_seed(derive_seed(seed, 1000 + static_cast<std::uint64_t>(it)), k);
      const GumbelSample sample = gumbel_sample(cm, p.us_positions, p.ct_positions, go);
      DwpLoss dl;
      try {
        dl = dwp_loss_grad(sample.matches, p.gt, cfg.loss);
      } catch (const std::exception& e) {
        throw std::runtime_error("toy training failed at iteration " + std::to_string(it) + ": " + e.what());
      }
      loss += dl.loss / static_cast<double>(pairs.size());
      const Eigen::MatrixXd g_probs = gumbel_backward(cm, sample, p.ct_positions, dl.grad, go);
      const Eigen::MatrixXd g_scores = dual_softmax_backward(cm, g_probs);
      const TokenGradient tg = score_backward(us, ct, ts.temperature, g_scores);
      grad_w += (tg.us.transpose() * p.us_tokens + tg.ct.transpose() * p.ct_tokens) / static_cast<double>(pairs.size());
    }
    if (!std::isfinite(loss) || !grad_w.allFinite()) {
      std::ostringstream msg;
      msg << "toy training diverged at iteration " << it << " (loss " << loss << ", |W| " << w.norm()
          << "); lower train.learning_rate";
      throw std::runtime_error(msg.str());
    }
    result.loss.push_back(loss);
    result.projection -= ts.learning_rate * grad_w;
  }
  return result;
}

void write_loss_curve(const std::filesystem::path& path, const std::vector<double>& loss) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "iteration,loss\n" << std::setprecision(17);
  for (std::size_t i = 0; i < loss.size(); ++i) out << i << ',' << loss[i] << '\n';
}

}  // namespace s2v::harness
