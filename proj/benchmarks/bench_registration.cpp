#include "s2v/pose_estimation.hpp"
#include "s2v/refine_mi.hpp"
#include "s2v/rng.hpp"
#include "s2v/volume.hpp"

#include <benchmark/benchmark.h>

namespace s2v {
namespace {

MatchSet random_matches(Rng& rng, int n) {
  const RigidPose gt = RigidPose::FromAxisAngle(Vec3::UnitZ(), 0.3, Vec3(5, -2, 7));
  MatchSet ms;
  for (int i = 0; i < n; ++i) {
    const Vec3 p(uniform(rng, 0, 64), uniform(rng, 0, 64), 0.0);
    const Vec3 noise(normal01(rng), normal01(rng), normal01(rng));
    ms.pairs.push_back({p, apply(gt, p) + 0.5 * noise, uniform(rng, 0.1, 1.0), i, i});
  }
  return ms;
}

void BM_Dwp(benchmark::State& state) {
  Rng rng(1);
  const MatchSet ms = random_matches(rng, static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(dwp(ms));
}
BENCHMARK(BM_Dwp)->Arg(64)->Arg(256)->Arg(1024);

void BM_DwpLossGrad(benchmark::State& state) {
  Rng rng(2);
  const MatchSet ms = random_matches(rng, static_cast<int>(state.range(0)));
  const RigidPose gt = RigidPose::FromAxisAngle(Vec3::UnitZ(), 0.3, Vec3(5, -2, 7));
  for (auto _ : state) benchmark::DoNotOptimize(dwp_loss_grad(ms, gt));
}
BENCHMARK(BM_DwpLossGrad)->Arg(64)->Arg(256);

void BM_Ransac(benchmark::State& state) {
  Rng rng(3);
  const MatchSet ms = random_matches(rng, 256);
  RansacOptions o;
  for (auto _ : state) benchmark::DoNotOptimize(ransac_pose(ms, o));
}
BENCHMARK(BM_Ransac);

// One 128 x 128 frame through a 128^3 volume.
void BM_ExtractSlice(benchmark::State& state) {
  const Volume3D vol = make_phantom(0, {128, 128, 128}, {1.25, 1.25, 1.25});
  const RigidPose pose = RigidPose::FromAxisAngle(Vec3(1, 1, 0).normalized(), 0.4, Vec3(40, 40, 80));
  for (auto _ : state) benchmark::DoNotOptimize(extract_slice(vol, pose, {128, 128}, {0.5, 0.5}));
}
BENCHMARK(BM_ExtractSlice)->Unit(benchmark::kMicrosecond);

void BM_MutualInformation(benchmark::State& state) {
  const Volume3D vol = make_phantom(1, {128, 128, 128}, {1.25, 1.25, 1.25});
  const RigidPose pose = RigidPose::FromAxisAngle(Vec3::UnitX(), 0.2, Vec3(40, 40, 80));
  const Frame2D a = extract_slice(vol, pose, {128, 128}, {0.5, 0.5});
  const Frame2D b = us_degrade(a, 2);
  for (auto _ : state) benchmark::DoNotOptimize(mutual_information(a, b, static_cast<int>(state.range(0))));
}
BENCHMARK(BM_MutualInformation)->Arg(32)->Arg(64)->Unit(benchmark::kMicrosecond);

void BM_MiRefine(benchmark::State& state) {
  const Volume3D vol = make_phantom(3, {64, 64, 64}, {2.0, 2.0, 2.0});
  const RigidPose gt = RigidPose::FromAxisAngle(Vec3::UnitY(), 0.2, Vec3(30, 30, 60));
  const Frame2D frame = extract_slice(vol, gt, {128, 128}, {0.5, 0.5});
  const RigidPose init = compose(gt, RigidPose::FromAxisAngle(Vec3::UnitZ(), 0.03, Vec3(1, -1, 0.5)));
  const MiConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(mi_refine(vol, frame, init, cfg));
}
BENCHMARK(BM_MiRefine)->Unit(benchmark::kMillisecond)->Iterations(3);

}  // namespace
}  // namespace s2v
