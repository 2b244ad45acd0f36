#include <benchmark/benchmark.h>

#include "cobra/ssm.hpp"

using namespace cobra;

namespace {

ssm::DiscreteSsmParams lti(std::size_t d, std::size_t n, Rng& rng) {
  ssm::LtiSsmParams p;
  p.delta.assign(d, 0.05);
  p.a = random_uniform(d, n, -2.0, -0.1, rng);
  p.b = random_normal(d, n, 1.0, rng);
  p.c = random_normal(d, n, 1.0, rng);
  return ssm::discretize_zoh(p);
}

void BM_LtiRecurrent(benchmark::State& st) {
  Rng rng(1);
  const auto d = lti(4, 8, rng);
  const Matrix x = random_normal(st.range(0), 4, 1.0, rng);
  for (auto _ : st) benchmark::DoNotOptimize(ssm::lti_scan_recurrent(d, x));
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

void BM_LtiConvolution(benchmark::State& st) {
  Rng rng(1);
  const auto d = lti(4, 8, rng);
  const Matrix x = random_normal(st.range(0), 4, 1.0, rng);
  for (auto _ : st) benchmark::DoNotOptimize(ssm::lti_forward_convolutional(d, x));
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

template <ssm::ScanMode Mode>
void BM_SelectiveScan(benchmark::State& st) {
  Rng rng(2);
  const auto w = ssm::SelectiveWeights::init(32, 16, 2, rng);
  const Matrix x = random_normal(st.range(0), 32, 1.0, rng);
  for (auto _ : st) benchmark::DoNotOptimize(ssm::selective_scan(x, w, Mode));
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

void BM_SelectiveScanF32(benchmark::State& st) {
  Rng rng(2);
  const auto w = ssm::SelectiveWeights::init(32, 16, 2, rng);
  const Matrix x = random_normal(st.range(0), 32, 1.0, rng);
  for (auto _ : st) benchmark::DoNotOptimize(ssm::selective_scan_f32(x, w, ssm::ScanMode::Parallel));
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

}  // namespace

BENCHMARK(BM_LtiRecurrent)->RangeMultiplier(4)->Range(64, 4096);
BENCHMARK(BM_LtiConvolution)->RangeMultiplier(4)->Range(64, 4096);
BENCHMARK(BM_SelectiveScan<ssm::ScanMode::Sequential>)->RangeMultiplier(4)->Range(64, 4096);
BENCHMARK(BM_SelectiveScan<ssm::ScanMode::Parallel>)->RangeMultiplier(4)->Range(64, 4096);
BENCHMARK(BM_SelectiveScanF32)->Arg(4096);

BENCHMARK_MAIN();
