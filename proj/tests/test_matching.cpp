#include "s2v/matching.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace s2v {
namespace {

using test::random_matrix;

// Two explicit softmaxes, written out with loops.
Eigen::MatrixXd dual_softmax_oracle(const Eigen::MatrixXd& s) {
  const Eigen::Index n = s.rows(), m = s.cols();
  Eigen::MatrixXd out(n, m);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < m; ++j) {
      double row = 0.0, col = 0.0;
      for (Eigen::Index k = 0; k < m; ++k) row += std::exp(s(i, k) - s(i, j));
      for (Eigen::Index k = 0; k < n; ++k) col += std::exp(s(k, j) - s(i, j));
      out(i, j) = 1.0 / (row * col);
    }
  return out;
}

ConfidenceMatrix probs_only(const Eigen::MatrixXd& p) {
  ConfidenceMatrix cm;
  cm.scores = Eigen::MatrixXd::Zero(p.rows(), p.cols());
  cm.probs = p;
  return cm;
}

std::vector<Vec3> line_positions(int n, double step) {
  std::vector<Vec3> out;
  for (int i = 0; i < n; ++i) out.emplace_back(step * i, 0.0, 0.0);
  return out;
}

TEST(ScoreMatrix, OneHotTokensGiveIdentity) {
  const Eigen::MatrixXd e = Eigen::MatrixXd::Identity(5, 5);
  EXPECT_EQ(score_matrix(e, e, 1.0).scores, e);
}

TEST(ScoreMatrix, TemperatureScales) {
  Rng rng(1);
  const Eigen::MatrixXd a = random_matrix(rng, 4, 3), b = random_matrix(rng, 6, 3);
  EXPECT_LT((score_matrix(a, b, 2.0).scores - 0.5 * score_matrix(a, b, 1.0).scores).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(ScoreMatrix, MatchesDotProductOracle) {
  Rng rng(2);
  const Eigen::MatrixXd a = random_matrix(rng, 9, 7), b = random_matrix(rng, 11, 7);
  const Eigen::MatrixXd s = score_matrix(a, b, 0.3).scores;
  for (int i = 0; i < 9; ++i)
    for (int j = 0; j < 11; ++j) {
      double dot = 0.0;
      for (int c = 0; c < 7; ++c) dot += a(i, c) * b(j, c);
      ASSERT_NEAR(s(i, j), dot / 0.3, 1e-10);
    }
}

TEST(ScoreMatrix, RejectsBadInput) {
  Rng rng(3);
  EXPECT_THROW(score_matrix(random_matrix(rng, 2, 3), random_matrix(rng, 2, 3), 0.0), ValidationError);
  EXPECT_THROW(score_matrix(random_matrix(rng, 2, 3), random_matrix(rng, 2, 4), 1.0), ValidationError);
}

TEST(DualSoftmax, ZeroScoresAreUniform) {
  ConfidenceMatrix cm;
  cm.scores = Eigen::MatrixXd::Zero(2, 2);
  const ConfidenceMatrix out = dual_softmax(cm);
  for (Eigen::Index i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(out.probs.data()[i], 0.25);
}

TEST(DualSoftmax, DiagonalTen) {
  ConfidenceMatrix cm;
  cm.scores = 10.0 * Eigen::MatrixXd::Identity(2, 2);
  const ConfidenceMatrix out = dual_softmax(cm);
  const double diag = std::pow(std::exp(10.0) / (std::exp(10.0) + 1.0), 2);
  const double off = std::pow(1.0 / (std::exp(10.0) + 1.0), 2);
  EXPECT_NEAR(out.probs(0, 0), diag, 1e-6);
  EXPECT_NEAR(out.probs(1, 1), diag, 1e-6);
  EXPECT_NEAR(out.probs(0, 1), off, 1e-6);
  EXPECT_NEAR(diag, 0.99991, 1e-5);
  EXPECT_NEAR(off, 2.06e-9, 1e-10);
}

TEST(DualSoftmax, SingleEntryIsOne) {
  ConfidenceMatrix cm;
  cm.scores = Eigen::MatrixXd::Constant(1, 1, -123.4);
  EXPECT_EQ(dual_softmax(cm).probs(0, 0), 1.0);
}

TEST(DualSoftmax, OracleAndInvariantsOnRandomMatrices) {
  Rng rng(4);
  for (int k = 0; k < 200; ++k) {
    const int n = 1 + static_cast<int>(rng() % 32), m = 1 + static_cast<int>(rng() % 32);
    ConfidenceMatrix cm;
    cm.scores = random_matrix(rng, n, m, 4.0);
    const ConfidenceMatrix out = dual_softmax(cm);
    ASSERT_LT((out.probs - dual_softmax_oracle(cm.scores)).cwiseAbs().maxCoeff(), 1e-10);
    const Eigen::MatrixXd r = row_softmax(cm.scores), c = col_softmax(cm.scores);
    ASSERT_GE(out.probs.minCoeff(), 0.0);
    ASSERT_LE(out.probs.maxCoeff(), 1.0);
    ASSERT_TRUE((out.probs.array() <= r.cwiseMin(c).array() + 1e-15).all());
    ConfidenceMatrix shifted = cm;
    shifted.scores.array() += uniform(rng, -50, 50);
    ASSERT_LT((dual_softmax(shifted).probs - out.probs).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(DualSoftmax, LargeScoresStayFinite) {
  ConfidenceMatrix cm;
  cm.scores = Eigen::MatrixXd::Constant(3, 3, 800.0);
  cm.scores(0, 0) = 1500.0;
  const ConfidenceMatrix out = dual_softmax(cm);
  EXPECT_TRUE(out.probs.allFinite());
  EXPECT_NEAR(out.probs(0, 0), 1.0, 1e-12);
}

TEST(DualSoftmax, BackwardMatchesFiniteDifferences) {
  Rng rng(5);
  ConfidenceMatrix cm;
  cm.scores = random_matrix(rng, 5, 7);
  const Eigen::MatrixXd weights = random_matrix(rng, 5, 7);
  const ConfidenceMatrix out = dual_softmax(cm);
  const Eigen::MatrixXd g = dual_softmax_backward(out, weights);
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < cm.scores.size(); ++i) {
    ConfidenceMatrix p = cm, m = cm;
    p.scores.data()[i] += h;
    m.scores.data()[i] -= h;
    const double fd = (dual_softmax(p).probs.cwiseProduct(weights).sum() - dual_softmax(m).probs.cwiseProduct(weights).sum()) / (2 * h);
    ASSERT_NEAR(g.data()[i], fd, 1e-7);
  }
}

TEST(ScoreBackward, MatchesFiniteDifferences) {
  Rng rng(6);
  const Eigen::MatrixXd a = random_matrix(rng, 4, 3), b = random_matrix(rng, 5, 3), w = random_matrix(rng, 4, 5);
  const TokenGradient g = score_backward(a, b, 0.7, w);
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    Eigen::MatrixXd p = a, m = a;
    p.data()[i] += h;
    m.data()[i] -= h;
    const double fd =
        (score_matrix(p, b, 0.7).scores.cwiseProduct(w).sum() - score_matrix(m, b, 0.7).scores.cwiseProduct(w).sum()) / (2 * h);
    ASSERT_NEAR(g.us.data()[i], fd, 1e-7);
  }
  for (Eigen::Index i = 0; i < b.size(); ++i) {
    Eigen::MatrixXd p = b, m = b;
    p.data()[i] += h;
    m.data()[i] -= h;
    const double fd =
        (score_matrix(a, p, 0.7).scores.cwiseProduct(w).sum() - score_matrix(a, m, 0.7).scores.cwiseProduct(w).sum()) / (2 * h);
    ASSERT_NEAR(g.ct.data()[i], fd, 1e-7);
  }
}

TEST(Gumbel, ZeroNoiseLowTauIsHardArgmax) {
  Rng rng(7);
  ConfidenceMatrix cm;
  cm.scores = random_matrix(rng, 6, 9, 3.0);
  cm = dual_softmax(cm);
  const auto us = line_positions(6, 4.0), ct = line_positions(9, 7.0);
  GumbelOptions o;
  o.add_noise = false;
  o.tau = 1e-6;
  o.min_row_confidence = 0.0;
  const GumbelSample s = gumbel_sample(cm, us, ct, o);
  ASSERT_EQ(s.matches.size(), 6u);
  for (int i = 0; i < 6; ++i) {
    Eigen::Index j = 0;
    cm.probs.row(i).maxCoeff(&j);
    EXPECT_EQ(s.y(i, j), 1.0);
    EXPECT_EQ(s.matches.pairs[static_cast<std::size_t>(i)].ct_point, ct[static_cast<std::size_t>(j)]);
    EXPECT_EQ(s.matches.pairs[static_cast<std::size_t>(i)].weight, cm.probs(i, j));
  }
}

TEST(Gumbel, SameSeedSameSample) {
  Rng rng(8);
  ConfidenceMatrix cm;
  cm.scores = random_matrix(rng, 4, 5);
  cm = dual_softmax(cm);
  const auto us = line_positions(4, 1.0), ct = line_positions(5, 1.0);
  GumbelOptions o;
  o.seed = 42;
  o.min_row_confidence = 0.0;
  const GumbelSample a = gumbel_sample(cm, us, ct, o), b = gumbel_sample(cm, us, ct, o);
  EXPECT_EQ(a.y, b.y);
  o.seed = 43;
  EXPECT_NE(a.y, gumbel_sample(cm, us, ct, o).y);
}

TEST(Gumbel, ArgmaxFrequenciesFollowTheCategorical) {
  const auto cm = probs_only((Eigen::MatrixXd(1, 3) << 0.6, 0.3, 0.1).finished());
  const auto us = line_positions(1, 1.0), ct = line_positions(3, 1.0);
  GumbelOptions o;
  o.tau = 0.1;
  o.min_row_confidence = 0.0;
  std::array<int, 3> counts{};
  const int draws = 10000;
  for (int k = 0; k < draws; ++k) {
    o.seed = static_cast<std::uint64_t>(k);
    Eigen::Index j = 0;
    gumbel_sample(cm, us, ct, o).y.row(0).maxCoeff(&j);
    ++counts[static_cast<std::size_t>(j)];
  }
  EXPECT_NEAR(counts[0] / double(draws), 0.6, 0.03);
  EXPECT_NEAR(counts[1] / double(draws), 0.3, 0.03);
  EXPECT_NEAR(counts[2] / double(draws), 0.1, 0.03);
}

TEST(Gumbel, SoftPointIsAConvexCombination) {
  Rng rng(9);
  ConfidenceMatrix cm;
  cm.scores = random_matrix(rng, 5, 8);
  cm = dual_softmax(cm);
  const auto us = line_positions(5, 1.0), ct = line_positions(8, 3.0);
  GumbelOptions o;
  o.min_row_confidence = 0.0;
  const GumbelSample s = gumbel_sample(cm, us, ct, o);
  for (std::size_t r = 0; r < s.matches.size(); ++r) {
    EXPECT_NEAR(s.y.row(static_cast<Eigen::Index>(r)).sum(), 1.0, 1e-12);
    EXPECT_GE(s.matches.pairs[r].ct_point.x(), 0.0);
    EXPECT_LE(s.matches.pairs[r].ct_point.x(), 21.0);
    EXPECT_GE(s.matches.pairs[r].weight, 0.0);
    EXPECT_LE(s.matches.pairs[r].weight, 1.0);
  }
}

TEST(Gumbel, LowConfidenceRowsAreDropped) {
  const auto cm = probs_only((Eigen::MatrixXd(2, 2) << 0.5, 0.2, 0.001, 0.002).finished());
  GumbelOptions o;
  o.min_row_confidence = 0.01;
  const GumbelSample s = gumbel_sample(cm, line_positions(2, 1.0), line_positions(2, 1.0), o);
  ASSERT_EQ(s.rows.size(), 1u);
  EXPECT_EQ(s.rows[0], 0);
}

TEST(Gumbel, RejectsNonPositiveTau) {
  const auto cm = probs_only(Eigen::MatrixXd::Constant(1, 1, 1.0));
  GumbelOptions o;
  o.tau = 0.0;
  EXPECT_THROW(gumbel_sample(cm, line_positions(1, 1), line_positions(1, 1), o), ValidationError);
}

TEST(HardMatches, DiagonalDominantGivesTheDiagonal) {
  const auto cm = probs_only((Eigen::MatrixXd(3, 3) << 0.8, 0.05, 0.05, 0.1, 0.7, 0.1, 0.02, 0.08, 0.6).finished());
  const auto us = line_positions(3, 1.0), ct = line_positions(3, 2.0);
  const MatchSet ms = hard_matches(cm, 0.2, us, ct);
  ASSERT_EQ(ms.size(), 3u);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(ms.pairs[static_cast<std::size_t>(i)].us_token, i);
    EXPECT_EQ(ms.pairs[static_cast<std::size_t>(i)].ct_token, i);
    EXPECT_EQ(ms.pairs[static_cast<std::size_t>(i)].ct_point, ct[static_cast<std::size_t>(i)]);
  }
  EXPECT_EQ(ms.kind, MatchKind::kHard);
}

TEST(HardMatches, ThresholdAboveMaxIsEmpty) {
  const auto cm = probs_only((Eigen::MatrixXd(2, 2) << 0.4, 0.1, 0.1, 0.3).finished());
  EXPECT_EQ(hard_matches(cm, 0.5, line_positions(2, 1), line_positions(2, 1)).size(), 0u);
}

TEST(HardMatches, NonReciprocatedPairIsExcluded) {
  // Row 1 prefers column 0, but column 0 prefers row 0.
  const auto cm = probs_only((Eigen::MatrixXd(2, 2) << 0.9, 0.05, 0.5, 0.3).finished());
  const MatchSet ms = hard_matches(cm, 0.2, line_positions(2, 1), line_positions(2, 1));
  ASSERT_EQ(ms.size(), 1u);
  EXPECT_EQ(ms.pairs[0].us_token, 0);
}

FeatureMap fine_map(int ndim, GridIndex dims, Eigen::MatrixXd data, double spacing = 1.0) {
  FeatureMap fm;
  fm.ndim = ndim;
  fm.grid_dims = dims;
  fm.scale = 4;
  fm.input_spacing = {spacing, spacing, spacing};
  fm.data = std::move(data);
  return fm;
}

TEST(FineRefine, SymmetricPeakKeepsThePoint) {
  // CT descriptors peak at the center cell and fall off symmetrically.
  const GridIndex dims{7, 7, 7};
  Eigen::MatrixXd ct(343, 1);
  for (int z = 0; z < 7; ++z)
    for (int y = 0; y < 7; ++y)
      for (int x = 0; x < 7; ++x) ct(x + 7 * (y + 7 * z), 0) = -((x - 3) * (x - 3) + (y - 3) * (y - 3) + (z - 3) * (z - 3));
  const FeatureMap fct = fine_map(3, dims, ct);
  const FeatureMap fus = fine_map(2, {2, 2, 1}, Eigen::MatrixXd::Ones(4, 1));
  Match m;
  m.ct_point = fct.position_mm({3, 3, 3});
  const Vec3 r = fine_refine(m, fus, fct, {5, 1.0});
  EXPECT_LT((r - m.ct_point).norm(), 1e-12);
}

TEST(FineRefine, LinearRampShiftsByTheClosedFormAmount) {
  // Correlation c * x along x, constant along y and z; 3-wide window around cell (2, 1, 1).
  const GridIndex dims{5, 3, 3};
  const double c = 1.0;
  Eigen::MatrixXd ct(45, 1);
  for (int z = 0; z < 3; ++z)
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 5; ++x) ct(x + 5 * (y + 3 * z), 0) = c * x;
  const FeatureMap fct = fine_map(3, dims, ct, 0.5);
  const FeatureMap fus = fine_map(2, {1, 1, 1}, Eigen::MatrixXd::Ones(1, 1));
  Match m;
  m.ct_point = fct.position_mm({2, 1, 1});
  const Vec3 r = fine_refine(m, fus, fct, {3, 1.0});
  const double e1 = std::exp(1.0), e2 = std::exp(2.0), e3 = std::exp(3.0);
  const double cell_x = (1 * e1 + 2 * e2 + 3 * e3) / (e1 + e2 + e3);  // 2.5752 cells
  const double mm_per_cell = 4 * 0.5;
  EXPECT_NEAR(r.x(), cell_x * mm_per_cell, 1e-12);
  EXPECT_NEAR(r.y(), m.ct_point.y(), 1e-12);
  EXPECT_NEAR(r.z(), m.ct_point.z(), 1e-12);
  EXPECT_GT(r.x(), m.ct_point.x());
}

TEST(FineRefine, BoundaryWindowIsClipped) {
  const GridIndex dims{5, 3, 3};
  Eigen::MatrixXd ct = Eigen::MatrixXd::Zero(45, 1);
  const FeatureMap fct = fine_map(3, dims, ct);
  const FeatureMap fus = fine_map(2, {1, 1, 1}, Eigen::MatrixXd::Ones(1, 1));
  Match m;
  m.ct_point = fct.position_mm({0, 0, 0});
  const Vec3 r = fine_refine(m, fus, fct, {3, 1.0});
  // Uniform weights over cells {0, 1} per axis: expectation is half a cell inward.
  EXPECT_NEAR(r.x(), 0.5 * 4.0, 1e-12);
  EXPECT_NEAR(r.y(), 0.5 * 4.0, 1e-12);
  EXPECT_GE(r.minCoeff(), 0.0);
}

TEST(FineRefine, RejectsEvenWindow) {
  const FeatureMap fct = fine_map(3, {5, 5, 5}, Eigen::MatrixXd::Zero(125, 1));
  const FeatureMap fus = fine_map(2, {1, 1, 1}, Eigen::MatrixXd::Ones(1, 1));
  EXPECT_THROW(fine_refine(Match{}, fus, fct, {4, 1.0}), ValidationError);
}

TEST(MatchesCsv, RoundTrip) {
  const auto dir = test::scratch_dir("matches_csv");
  MatchSet ms;
  ms.pairs.push_back({Vec3(1, 2, 3), Vec3(4.5, 5.25, -6.125), 0.75, 0, -1});
  ms.pairs.push_back({Vec3(0.1, 0.2, 0.3), Vec3(7, 8, 9), 0.1, 1, -1});
  write_matches_csv(dir / "m.csv", ms);
  const MatchSet r = read_matches_csv(dir / "m.csv");
  ASSERT_EQ(r.size(), 2u);
  EXPECT_EQ(r.pairs[0].ct_point, ms.pairs[0].ct_point);
  EXPECT_EQ(r.pairs[1].us_point, ms.pairs[1].us_point);
  EXPECT_EQ(r.pairs[1].weight, ms.pairs[1].weight);
}

}  // namespace
}  // namespace s2v
