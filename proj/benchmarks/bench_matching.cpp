#include "bench_util.hpp"
#include "s2v/attention.hpp"
#include "s2v/matching.hpp"

#include <benchmark/benchmark.h>

namespace s2v {
namespace {

using bench::random_matrix;

// N tokens attending over N tokens with d = 32 channels.
void BM_LinearAttention(benchmark::State& state) {
  const auto n = static_cast<Eigen::Index>(state.range(0));
  Rng rng(1);
  const Eigen::MatrixXd q = random_matrix(rng, n, 32), k = random_matrix(rng, n, 32), v = random_matrix(rng, n, 32);
  for (auto _ : state) benchmark::DoNotOptimize(linear_attention(q, k, v));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_LinearAttention)->RangeMultiplier(4)->Range(64, 4096)->Complexity(benchmark::oN);

void BM_LoftrTransform(benchmark::State& state) {
  Rng rng(2);
  AttentionConfig cfg;
  cfg.n_f = static_cast<int>(state.range(0));
  const AttentionWeights w = random_attention_weights(48, cfg, 3);
  TokenSequence us, ct;
  us.tokens = random_matrix(rng, 256, 48);
  ct.tokens = random_matrix(rng, 4096, 48);
  for (auto _ : state) benchmark::DoNotOptimize(loftr_transform(us, ct, w));
}
BENCHMARK(BM_LoftrTransform)->Arg(1)->Arg(4);

// N x 8N score matrices, the coarse frame-to-volume shape.
void BM_DualSoftmax(benchmark::State& state) {
  const auto n = static_cast<Eigen::Index>(state.range(0));
  Rng rng(4);
  ConfidenceMatrix cm;
  cm.scores = random_matrix(rng, n, 8 * n, 3.0);
  for (auto _ : state) benchmark::DoNotOptimize(dual_softmax(cm));
}
BENCHMARK(BM_DualSoftmax)->Arg(64)->Arg(256);

void BM_GumbelSample(benchmark::State& state) {
  const auto n = static_cast<Eigen::Index>(state.range(0));
  Rng rng(5);
  ConfidenceMatrix cm;
  cm.scores = random_matrix(rng, n, 8 * n, 3.0);
  cm = dual_softmax(cm);
  std::vector<Vec3> us, ct;
  for (Eigen::Index i = 0; i < n; ++i) us.emplace_back(uniform(rng, 0, 64), uniform(rng, 0, 64), 0.0);
  for (Eigen::Index j = 0; j < 8 * n; ++j) ct.emplace_back(uniform(rng, 0, 160), uniform(rng, 0, 160), uniform(rng, 0, 160));
  GumbelOptions o;
  std::uint64_t seed = 0;
  for (auto _ : state) {
    o.seed = seed++;
    benchmark::DoNotOptimize(gumbel_sample(cm, us, ct, o));
  }
}
BENCHMARK(BM_GumbelSample)->Arg(64)->Arg(256);

}  // namespace
}  // namespace s2v
