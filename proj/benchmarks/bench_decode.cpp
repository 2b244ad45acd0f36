#include <benchmark/benchmark.h>

#include "cobra/bench.hpp"

using namespace cobra;

namespace {

lm::BackboneWeights backbone() {
  lm::BackboneConfig cfg;
  cfg.model_dim = 64;
  Rng rng(3);
  return lm::BackboneWeights::init(cfg, rng);
}

// Per-token cost after a prompt of range(0) tokens; should stay flat.
void BM_SsmDecodeStep(benchmark::State& st) {
  const auto w = backbone();
  Rng rng(4);
  lm::GenerationSession base(w, lm::SamplingConfig{});
  base.prefill(w, random_normal(st.range(0), w.config.model_dim, 0.5, rng));
  lm::GenerationSession s = base;
  lm::TokenId tok = 0;
  for (auto _ : st) {
    benchmark::DoNotOptimize(s.step(w, tok));
    tok = (tok + 1) & 0xff;
  }
}

// Per-token cost of causal attention over a cache of range(0) entries.
void BM_AttentionDecodeStep(benchmark::State& st) {
  Rng rng(5);
  const auto ref = bench::AttentionReference::init(64, rng);
  auto base = bench::KvCache::empty(64);
  bench::prefill_cache(ref, base, random_normal(st.range(0), 64, 1.0, rng));
  const Matrix x = random_normal(1, 64, 1.0, rng);
  for (auto _ : st) {
    st.PauseTiming();
    auto cache = base;
    st.ResumeTiming();
    benchmark::DoNotOptimize(bench::attention_reference_step(ref, cache, x.row(0)));
  }
}

void BM_Prefill(benchmark::State& st) {
  const auto w = backbone();
  Rng rng(6);
  const Matrix x = random_normal(st.range(0), w.config.model_dim, 0.5, rng);
  for (auto _ : st) benchmark::DoNotOptimize(lm::forward_logits(w, x));
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

}  // namespace

BENCHMARK(BM_SsmDecodeStep)->RangeMultiplier(2)->Range(256, 4096);
BENCHMARK(BM_AttentionDecodeStep)->RangeMultiplier(2)->Range(256, 4096);
BENCHMARK(BM_Prefill)->Arg(64)->Arg(745);

BENCHMARK_MAIN();
