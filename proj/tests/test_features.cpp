#include "s2v/features.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <set>

namespace s2v {
namespace {

ExtractorWeights zero_bias_weights(int ndim, bool nonlinearity, std::uint64_t seed) {
  ExtractorConfig cfg;
  cfg.nonlinearity = nonlinearity;
  return random_extractor_weights(ndim, cfg, seed);
}

Frame2D random_frame(std::array<int, 2> dims, std::uint64_t seed) {
  Frame2D f(dims, {0.5, 0.5});
  Rng rng(seed);
  for (auto& x : f.data) x = static_cast<float>(uniform01(rng));
  return f;
}

TEST(ExtractFeatures, FrameGridSizes) {
  const FeaturePair fp = extract_features(random_frame({64, 64}, 1), zero_bias_weights(2, true, 3));
  EXPECT_EQ(fp.coarse.grid_dims, (GridIndex{8, 8, 1}));
  EXPECT_EQ(fp.fine.grid_dims, (GridIndex{16, 16, 1}));
  EXPECT_EQ(fp.coarse.scale, 8);
  EXPECT_EQ(fp.fine.scale, 4);
  EXPECT_EQ(fp.coarse.channels(), 48);
  EXPECT_EQ(fp.fine.channels(), 16);
}

TEST(ExtractFeatures, VolumeGridSizes) {
  const Volume3D v({64, 64, 32}, {1, 1, 1}, 0.5f);
  const FeaturePair fp = extract_features(v, zero_bias_weights(3, true, 3));
  EXPECT_EQ(fp.coarse.grid_dims, (GridIndex{8, 8, 4}));
  EXPECT_EQ(fp.fine.grid_dims, (GridIndex{16, 16, 8}));
}

TEST(ExtractFeatures, NonMultipleSizesUseCeilDivision) {
  const FeaturePair fp = extract_features(random_frame({70, 33}, 2), zero_bias_weights(2, true, 3));
  EXPECT_EQ(fp.coarse.grid_dims, (GridIndex{9, 5, 1}));
  EXPECT_EQ(fp.fine.grid_dims, (GridIndex{18, 9, 1}));
}

TEST(ExtractFeatures, ZeroInputGivesZeroDescriptors) {
  const Frame2D f({64, 64}, {0.5, 0.5}, 0.0f);
  const FeaturePair fp = extract_features(f, zero_bias_weights(2, true, 4));
  EXPECT_EQ(fp.coarse.data.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(fp.fine.data.cwiseAbs().maxCoeff(), 0.0);
}

TEST(ExtractFeatures, LinearWithoutNonlinearity) {
  const ExtractorWeights w = zero_bias_weights(2, false, 5);
  const Frame2D a = random_frame({32, 32}, 6), b = random_frame({32, 32}, 7);
  Frame2D sum = a;
  for (std::size_t i = 0; i < sum.data.size(); ++i) sum.data[i] = a.data[i] + 2.0f * b.data[i];
  const FeaturePair fa = extract_features(a, w), fb = extract_features(b, w), fs = extract_features(sum, w);
  EXPECT_LT((fs.coarse.data - fa.coarse.data - 2.0 * fb.coarse.data).cwiseAbs().maxCoeff(), 1e-5);
  EXPECT_LT((fs.fine.data - fa.fine.data - 2.0 * fb.fine.data).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(ExtractFeatures, DeterministicWeights) {
  const ExtractorWeights a = zero_bias_weights(3, true, 9), b = zero_bias_weights(3, true, 9);
  EXPECT_EQ(a.coarse_head.weights, b.coarse_head.weights);
  EXPECT_EQ(a.stages[0].weights, b.stages[0].weights);
  EXPECT_NE(a.stages[0].weights, zero_bias_weights(3, true, 10).stages[0].weights);
}

TEST(ExtractorWeights, ValidateCatchesShapeMismatch) {
  ExtractorWeights w = zero_bias_weights(2, true, 1);
  EXPECT_NO_THROW(w.Validate());
  w.stages[1].in_channels += 1;
  EXPECT_THROW(w.Validate(), ValidationError);
}

TEST(ExtractorWeights, FileRoundTrip) {
  const auto dir = test::scratch_dir("extractor_io");
  const ExtractorWeights w = zero_bias_weights(3, true, 12);
  write_extractor_weights(dir / "w", w);
  const ExtractorWeights r = read_extractor_weights(dir / "w");
  EXPECT_EQ(r.ndim, 3);
  // Stored as f32.
  EXPECT_LT((r.coarse_head.weights - w.coarse_head.weights).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LT((r.stages[2].weights - w.stages[2].weights).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(PositionalEncoding, OriginIsSinZeroCosOne) {
  for (int d : {12, 24, 48}) {
    const Eigen::MatrixXd pe = positional_encoding(2, {8, 8, 1}, d);
    for (int c = 0; c < d; c += 2) {
      EXPECT_EQ(pe(0, c), 0.0);
      EXPECT_EQ(pe(0, c + 1), 1.0);
    }
  }
}

TEST(PositionalEncoding, DistinctPositionsInAnEightByEightGrid) {
  const Eigen::MatrixXd pe = positional_encoding(2, {8, 8, 1}, 48);
  double min_dist = 1e9;
  for (int a = 0; a < 64; ++a)
    for (int b = a + 1; b < 64; ++b) min_dist = std::min(min_dist, (pe.row(a) - pe.row(b)).norm());
  EXPECT_GT(min_dist, 0.0);
}

TEST(PositionalEncoding, EntriesBounded) {
  const Eigen::MatrixXd pe = positional_encoding(3, {5, 6, 7}, 48);
  EXPECT_LE(pe.cwiseAbs().maxCoeff(), 1.0);
}

TEST(PositionalEncoding, RejectsIndivisibleChannels) {
  EXPECT_THROW(positional_encoding(3, {2, 2, 2}, 8), ValidationError);
  EXPECT_THROW(positional_encoding(2, {2, 2, 1}, 6), ValidationError);
}

FeatureMap ramp_map(GridIndex dims, int ndim, int channels) {
  FeatureMap fm;
  fm.ndim = ndim;
  fm.grid_dims = dims;
  fm.data.resize(fm.cell_count(), channels);
  for (Eigen::Index i = 0; i < fm.data.size(); ++i) fm.data.data()[i] = static_cast<double>(i) * 0.37;
  return fm;
}

TEST(Tokenize, RowMajorXFastest) {
  const TokenSequence ts = tokenize(ramp_map({2, 3, 1}, 2, 4), false);
  ASSERT_EQ(ts.size(), 6);
  EXPECT_EQ(ts.index_map[4], (GridIndex{0, 2, 0}));
  EXPECT_EQ(ts.index_map[3], (GridIndex{1, 1, 0}));
  // The cell at grid (1, 1) is token 1 + 2 * 1 = 3.
  EXPECT_EQ(ts.index_map[1 + 2 * 1], (GridIndex{1, 1, 0}));
}

TEST(Tokenize, InverseRestoresGrid) {
  const FeatureMap fm = ramp_map({3, 4, 5}, 3, 6);
  const FeatureMap back = untokenize(tokenize(fm, false));
  EXPECT_EQ(back.grid_dims, fm.grid_dims);
  EXPECT_EQ(back.data, fm.data);
}

TEST(Tokenize, IndexMapIsABijection) {
  const TokenSequence ts = tokenize(ramp_map({3, 4, 5}, 3, 6), false);
  std::set<GridIndex> seen(ts.index_map.begin(), ts.index_map.end());
  EXPECT_EQ(seen.size(), 60u);
}

TEST(Tokenize, ZeroDescriptorsGiveEncodings) {
  FeatureMap fm = ramp_map({4, 3, 1}, 2, 12);
  fm.data.setZero();
  const TokenSequence ts = tokenize(fm, true);
  EXPECT_EQ(ts.tokens, positional_encoding(2, fm.grid_dims, 12));
}

TEST(FeatureMap, PositionsAndNearestCell) {
  FeatureMap fm = ramp_map({4, 4, 4}, 3, 1);
  fm.scale = 8;
  fm.input_spacing = {1.25, 1.25, 2.0};
  EXPECT_EQ(fm.position_mm({1, 2, 3}), Vec3(10.0, 20.0, 48.0));
  EXPECT_EQ(fm.nearest_cell(Vec3(14.0, 26.0, 1000.0)), (GridIndex{1, 3, 3}));
  EXPECT_EQ(fm.nearest_cell(Vec3(-50.0, 0.0, 0.0)), (GridIndex{0, 0, 0}));
}

// Direct kernel: gain * sum_a sum_k a_k cos(k w (x_a - y_a)) / (3 sum_k a_k).
double kernel_oracle(const Vec3& x, const Vec3& y, double width, double period, double gain) {
  const int freqs = oracle_channels(width, period) / 6;
  const double w = 2.0 * std::numbers::pi / period;
  double num = 0, den = 0;
  for (int k = 0; k < freqs; ++k) {
    const double a = std::exp(-0.5 * std::pow(k * w * width, 2));
    den += 3 * a;
    for (int ax = 0; ax < 3; ++ax) num += a * std::cos(k * w * (x[ax] - y[ax]));
  }
  return gain * num / den;
}

TEST(OracleDescriptors, InnerProductIsTheShiftInvariantKernel) {
  Rng rng(21);
  std::vector<Vec3> pts;
  for (int i = 0; i < 30; ++i) pts.push_back(test::random_vec(rng, 0.0, 150.0));
  const Eigen::MatrixXd d = oracle_descriptors(pts, 12.0, 320.0, 5.0);
  for (int i = 0; i < 30; ++i) {
    EXPECT_NEAR(d.row(i).squaredNorm(), 5.0, 1e-10);
    for (int j = 0; j < 30; ++j)
      ASSERT_NEAR(d.row(i).dot(d.row(j)), kernel_oracle(pts[i], pts[j], 12.0, 320.0, 5.0), 1e-10);
  }
}

TEST(OracleDescriptors, SelfSimilarityIsTheStrictMaximum) {
  std::vector<Vec3> pts;
  for (int i = 0; i < 10; ++i) pts.emplace_back(8.0 * i, 3.0 * i, 0.0);
  const Eigen::MatrixXd d = oracle_descriptors(pts, 24.0, 320.0, 5.0);
  const Eigen::MatrixXd g = d * d.transpose();
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 10; ++j)
      if (i != j) EXPECT_LT(g(i, j), g(i, i));
}

TEST(OracleDescriptors, ChannelCount) {
  const double step = 2.0 * std::numbers::pi / 80.0;
  EXPECT_EQ(oracle_channels(8.0, 80.0), 6 * (static_cast<int>(std::ceil(3.5 / (step * 8.0))) + 1));
  EXPECT_THROW(oracle_channels(0.0, 10.0), ValidationError);
}

TEST(OracleFeatures, FrameAndVolumeAgreeAtGt) {
  const Volume3D v({64, 64, 64}, {1.25, 1.25, 1.25}, 0.0f);
  const Frame2D f({128, 128}, {0.5, 0.5});
  const RigidPose gt = RigidPose::Translation(Vec3(8.0, 16.0, 40.0));
  OracleDescriptorConfig cfg;
  const FeaturePair fu = oracle_features(f, gt, cfg, 160.0);
  const FeaturePair fc = oracle_features(v, cfg, 160.0);
  // US coarse cell (1, 2) sits at (4, 8, 0) mm in the frame, (12, 24, 40) mm in the volume.
  const GridIndex us_cell{1, 2, 0};
  const Vec3 p = apply(gt, fu.coarse.position_mm(us_cell));
  const Eigen::MatrixXd oracle = oracle_descriptors({p}, cfg.coarse_width_mm, 160.0, cfg.gain);
  EXPECT_LT((fu.coarse.data.row(fu.coarse.cell(us_cell)) - oracle.row(0)).norm(), 1e-12);
  const GridIndex ct_cell{2, 3, 4};
  const Eigen::MatrixXd ct_oracle =
      oracle_descriptors({fc.coarse.position_mm(ct_cell)}, cfg.coarse_width_mm, 160.0, cfg.gain);
  EXPECT_LT((fc.coarse.data.row(fc.coarse.cell(ct_cell)) - ct_oracle.row(0)).norm(), 1e-12);
}

}  // namespace
}  // namespace s2v
