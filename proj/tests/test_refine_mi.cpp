#include "s2v/refine_mi.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

namespace s2v {
namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

Frame2D noise_frame(std::uint64_t seed, int n = 128) {
  Frame2D f({n, n}, {1.0, 1.0});
  Rng rng(seed);
  for (auto& x : f.data) x = static_cast<float>(uniform01(rng));
  return f;
}

struct Scene {
  Volume3D vol;
  Frame2D frame;
  RigidPose gt;
};

// 64 mm frame through the middle of an 80 mm phantom, tilted by up to 20 degrees.
Scene scene(std::uint64_t seed) {
  Scene s;
  s.vol = make_phantom(seed, {64, 64, 64}, {1.25, 1.25, 1.25});
  Rng rng(derive_seed(seed, 77));
  const Frame2D shape({128, 128}, {0.5, 0.5});
  const RigidPose tilt = test::random_pose(rng, 20.0 * kDeg, 0.0);
  s.gt = compose(RigidPose::Translation(s.vol.center_mm()), compose(tilt, RigidPose::Translation(-shape.center_mm())));
  s.frame = extract_slice(s.vol, s.gt, shape.dims, shape.spacing);
  return s;
}

// gt moved by `deg` about a random axis through the frame center and `mm` along a random direction.
RigidPose offset_init(const Scene& s, double deg, double mm, std::uint64_t seed) {
  Rng rng(seed);
  Vec3 axis(normal01(rng), normal01(rng), normal01(rng));
  Vec3 dir(normal01(rng), normal01(rng), normal01(rng));
  const Vec3 c = s.frame.center_mm();
  const RigidPose about_center = compose(RigidPose::Translation(c + mm * dir.normalized()),
                                         compose(RigidPose::FromAxisAngle(axis.normalized(), deg * kDeg),
                                                 RigidPose::Translation(-c)));
  return compose(s.gt, about_center);
}

TEST(MutualInformation, SelfInformationIsEntropy) {
  const Frame2D f = noise_frame(1);
  EXPECT_NEAR(mutual_information(f, f, 32), entropy(f, 32), 1e-10);
  const Scene s = scene(2);
  EXPECT_NEAR(mutual_information(s.frame, s.frame, 32), entropy(s.frame, 32), 1e-10);
}

TEST(MutualInformation, IndependentNoiseIsNearZero) {
  EXPECT_LT(mutual_information(noise_frame(3), noise_frame(4), 32), 0.05);
}

TEST(MutualInformation, AffineRemapIsExactlyInvariant) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Scene s = scene(seed);
    const Frame2D moved = extract_slice(s.vol, offset_init(s, 3.0, 3.0, seed), s.frame.dims, s.frame.spacing);
    Frame2D remapped = s.frame;
    for (auto& x : remapped.data) x = 3.0f * x + 1.0f;
    EXPECT_NEAR(mutual_information(remapped, moved, 32), mutual_information(s.frame, moved, 32), 1e-12);
  }
}

// Equal-width bins make MI only roughly invariant under nonlinear remaps; alignment must still win.
TEST(MutualInformation, GammaRemapKeepsAlignmentOnTop) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Scene s = scene(seed);
    Frame2D remapped = s.frame;
    for (auto& x : remapped.data) x = std::pow(x, 0.7f);
    const Frame2D at_gt = extract_slice(s.vol, s.gt, s.frame.dims, s.frame.spacing);
    const Frame2D off = extract_slice(s.vol, offset_init(s, 3.0, 3.0, seed), s.frame.dims, s.frame.spacing);
    EXPECT_GT(mutual_information(remapped, at_gt, 32), mutual_information(remapped, off, 32)) << "seed " << seed;
    EXPECT_LT(std::abs(mutual_information(remapped, off, 32) - mutual_information(s.frame, off, 32)), 0.3);
  }
}

TEST(MutualInformation, SymmetricAndBounded) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Scene s = scene(seed);
    const Frame2D other = extract_slice(s.vol, offset_init(s, 10.0, 5.0, seed), s.frame.dims, s.frame.spacing);
    const double ab = mutual_information(s.frame, other, 32), ba = mutual_information(other, s.frame, 32);
    EXPECT_NEAR(ab, ba, 1e-12);
    EXPECT_LE(ab, std::min(entropy(s.frame, 32), entropy(other, 32)) + 1e-10);
    EXPECT_GE(ab, 0.0);
  }
}

TEST(MutualInformation, ConstantImageHasNoInformation) {
  const Frame2D c({32, 32}, {1, 1}, 0.4f);
  EXPECT_EQ(entropy(c, 16), 0.0);
  EXPECT_EQ(mutual_information(c, noise_frame(5, 32), 16), 0.0);
}

TEST(MutualInformation, RejectsBadInput) {
  EXPECT_THROW(mutual_information(noise_frame(1, 16), noise_frame(2, 32), 32), ValidationError);
  EXPECT_THROW(mutual_information(noise_frame(1, 16), noise_frame(2, 16), 4), ValidationError);
}

TEST(EulerOffset, ZeroIsIdentityAndCenterIsFixed) {
  const Vec3 c(32, 32, 0);
  const RigidPose z = euler_offset({0, 0, 0, 0, 0, 0}, c);
  EXPECT_EQ(z.matrix(), Mat4::Identity());
  const RigidPose r = euler_offset({30, -20, 10, 0, 0, 0}, c);
  EXPECT_LT((apply(r, c) - c).norm(), 1e-12);
  EXPECT_TRUE(r.IsValid());
  // Z-Y-X intrinsic order.
  const Mat3 expect = (Eigen::AngleAxisd(30 * kDeg, Vec3::UnitZ()) * Eigen::AngleAxisd(-20 * kDeg, Vec3::UnitY()) *
                       Eigen::AngleAxisd(10 * kDeg, Vec3::UnitX()))
                          .toRotationMatrix();
  EXPECT_LT((r.rotation - expect).norm(), 1e-12);
}

TEST(MiRefine, StaysAtTheOptimum) {
  const Scene s = scene(6);
  const MiResult r = mi_refine(s.vol, s.frame, s.gt, MiConfig{});
  const PoseError e = pose_error(r.pose, s.gt);
  EXPECT_LT(e.rotation_deg, 0.1);
  EXPECT_LT(e.translation_mm, 0.1);
  EXPECT_GE(r.final_mi, r.initial_mi);
}

TEST(MiRefine, RecoversSmallOffsets) {
  int ok = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Scene s = scene(seed);
    const MiResult r = mi_refine(s.vol, s.frame, offset_init(s, 5.0, 5.0, 100 + seed), MiConfig{});
    const PoseError e = pose_error(r.pose, s.gt);
    ok += e.rotation_deg < 1.0 && e.translation_mm < 1.0;
    EXPECT_GE(r.final_mi, r.initial_mi);
  }
  EXPECT_GE(ok, 8);
}

TEST(MiRefine, LargeOffsetsGetStuck) {
  int stuck = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Scene s = scene(seed);
    const MiResult r = mi_refine(s.vol, s.frame, offset_init(s, 90.0, 0.0, 200 + seed), MiConfig{});
    stuck += pose_error(r.pose, s.gt).rotation_deg > 15.0;
  }
  EXPECT_GT(stuck, 5);
}

TEST(MiRefine, NeverLowersMiAndRecordsATrace) {
  const Scene s = scene(7);
  MiConfig cfg;
  cfg.record_trace = true;
  cfg.max_iterations = 30;
  const MiResult r = mi_refine(s.vol, s.frame, offset_init(s, 8.0, 4.0, 5), cfg);
  EXPECT_GE(r.final_mi, r.initial_mi);
  ASSERT_FALSE(r.trace.empty());
  for (std::size_t i = 1; i < r.trace.size(); ++i) EXPECT_GE(r.trace[i].mi, r.trace[i - 1].mi - 1e-12);
  const double mi_at_result =
      mutual_information(extract_slice(s.vol, r.pose, s.frame.dims, s.frame.spacing), s.frame, cfg.bins);
  EXPECT_NEAR(mi_at_result, r.final_mi, 1e-12);
  const auto dir = test::scratch_dir("mi_trace");
  write_mi_trace(dir / "t.csv", r);
  EXPECT_NE(test::slurp(dir / "t.csv").find("iteration,mi"), std::string::npos);
}

TEST(MiRefine, Deterministic) {
  const Scene s = scene(8);
  const RigidPose init = offset_init(s, 4.0, 4.0, 9);
  EXPECT_EQ(mi_refine(s.vol, s.frame, init, {}).pose.matrix(), mi_refine(s.vol, s.frame, init, {}).pose.matrix());
}

TEST(MiConfig, Validation) {
  MiConfig c;
  EXPECT_NO_THROW(c.Validate());
  c.bins = 4;
  EXPECT_THROW(c.Validate(), ValidationError);
  c = {};
  c.step_mm = 0;
  EXPECT_THROW(c.Validate(), ValidationError);
  c = {};
  c.restarts = -1;
  EXPECT_THROW(c.Validate(), ValidationError);
}

}  // namespace
}  // namespace s2v
