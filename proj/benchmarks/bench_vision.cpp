#include <benchmark/benchmark.h>

#include "cobra/model.hpp"

using namespace cobra;

namespace {

void BM_EncodeImage(benchmark::State& st) {
  const auto m = CobraModel::init(PipelineConfig::standard());
  const auto img = vision::ImageInput::blank(378, 0.5);
  for (auto _ : st) benchmark::DoNotOptimize(m.encode(img));
}

template <vision::ProjectorKind Kind>
void BM_Project(benchmark::State& st) {
  auto cfg = PipelineConfig::standard();
  cfg.projector = Kind;
  const auto m = CobraModel::init(cfg);
  const auto f = m.encode(vision::ImageInput::blank(378, 0.5));
  for (auto _ : st) benchmark::DoNotOptimize(m.project(f));
  st.counters["tokens"] = static_cast<double>(m.project(f).h_v.rows());
}

}  // namespace

BENCHMARK(BM_EncodeImage)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Project<vision::ProjectorKind::Mlp>)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Project<vision::ProjectorKind::Ldp>)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
