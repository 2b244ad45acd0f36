#include <gtest/gtest.h>

#include <cmath>

#include "cobra/bench.hpp"

using namespace cobra;
using namespace cobra::bench;

namespace {

// Naive causal attention of row t over rows 0..t.
Vector naive_attention(const AttentionReference& r, const Matrix& x, std::size_t t) {
  const std::size_t d = r.dim();
  auto lin = [&](const Matrix& w, std::span<const double> v) {
    Vector out(d, 0.0);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) out[i] += w(i, j) * v[j];
    return out;
  };
  const Vector q = lin(r.wq, x.row(t));
  std::vector<double> scores(t + 1);
  double mx = -INFINITY;
  for (std::size_t s = 0; s <= t; ++s) {
    const Vector k = lin(r.wk, x.row(s));
    double dot = 0.0;
    for (std::size_t i = 0; i < d; ++i) dot += q[i] * k[i];
    scores[s] = dot / std::sqrt(static_cast<double>(d));
    mx = std::max(mx, scores[s]);
  }
  double z = 0.0;
  for (auto& s : scores) z += (s = std::exp(s - mx));
  Vector mixed(d, 0.0);
  for (std::size_t s = 0; s <= t; ++s) {
    const Vector v = lin(r.wv, x.row(s));
    for (std::size_t i = 0; i < d; ++i) mixed[i] += scores[s] / z * v[i];
  }
  return lin(r.wo, mixed);
}

}  // namespace

TEST(Report, EvalAverageIdentity) {
  const auto r = make_report("cobra", 729, 256, 1.54);
  EXPECT_NEAR(r.eval_avg, 166.23, 0.005);
  EXPECT_DOUBLE_EQ(r.eval_avg * r.t_total_s, 256.0);
  EXPECT_THROW(make_report("x", 0, 0, 1.0), PreconditionError);
  EXPECT_THROW(make_report("x", 0, 10, 0.0), PreconditionError);
  EXPECT_THROW(make_report("x", 0, 10, NAN), PreconditionError);
}

TEST(Report, TableAndCsv) {
  const std::vector<ThroughputReport> reports{make_report("cobra", 729, 256, 1.54)};
  const std::string t = format_table(reports);
  EXPECT_NE(t.find("Eval_avg (tok/s)"), std::string::npos);
  EXPECT_NE(t.find("166.23"), std::string::npos);
  EXPECT_NE(t.find("729"), std::string::npos);
  EXPECT_NE(reports_csv(reports).find("cobra"), std::string::npos);
}

TEST(Stats, MedianAndSlope) {
  EXPECT_EQ(median({3.0, 1.0, 2.0}), 2.0);
  EXPECT_EQ(median({4.0, 1.0, 2.0, 3.0}), 2.5);
  EXPECT_THROW(median({}), PreconditionError);
  const std::vector<double> xs{256, 512, 1024, 2048};
  std::vector<double> ys;
  for (double x : xs) ys.push_back(0.003 * x + 2.0);
  EXPECT_NEAR(least_squares_slope(xs, ys), 0.003, 1e-12);
}

TEST(Throughput, ForcedLengthAndIdentity) {
  const auto model = CobraModel::init(PipelineConfig::tiny());
  const auto img = vision::ImageInput::blank(16, 0.5);
  ThroughputOptions opts;
  opts.n_out = 24;
  opts.reps = 3;
  const auto r = measure_throughput(model, &img, prompt::Conversation::single("Describe."), prompt::Template::Chat, opts);
  EXPECT_EQ(r.output_tokens, 24u);
  EXPECT_FALSE(r.short_generation);
  EXPECT_EQ(r.visual_tokens, model.config.visual_tokens());
  EXPECT_EQ(r.rep_seconds.size(), 3u);
  EXPECT_DOUBLE_EQ(r.t_total_s, median(r.rep_seconds));
  EXPECT_DOUBLE_EQ(r.eval_avg, 24.0 / r.t_total_s);
  opts.n_out = 0;
  EXPECT_THROW(measure_throughput(model, &img, prompt::Conversation::single("x"), prompt::Template::Chat, opts),
               PreconditionError);
}

TEST(Attention, StepMatchesNaiveAndFull) {
  Rng rng(3);
  const auto ref = AttentionReference::init(6, rng);
  const Matrix x = random_normal(64, 6, 1.0, rng);
  const Matrix full = attention_full_forward(ref, x);
  auto cache = KvCache::empty(6);
  for (std::size_t t = 0; t < 64; ++t) {
    const Vector y = attention_reference_step(ref, cache, x.row(t));
    EXPECT_EQ(cache.entries(), t + 1);
    ASSERT_LE(max_abs_diff(y, full.row(t)), 1e-12) << t;
    if (t % 9 == 0) ASSERT_LE(max_abs_diff(y, naive_attention(ref, x, t)), 1e-12) << t;
  }
}

TEST(Attention, SingleTokenPassesValueThrough) {
  Rng rng(4);
  const auto ref = AttentionReference::init(4, rng);
  const Matrix x = random_normal(1, 4, 1.0, rng);
  auto cache = KvCache::empty(4);
  const Vector y = attention_reference_step(ref, cache, x.row(0));
  // Softmax over one key is 1: y = Wo Wv x.
  Vector v(4), want(4);
  matvec(ref.wv, x.row(0), v);
  matvec(ref.wo, v, want);
  EXPECT_LE(max_abs_diff(y, want), 1e-14);
}

TEST(Attention, PrefillThenStep) {
  Rng rng(5);
  const auto ref = AttentionReference::init(4, rng);
  const Matrix x = random_normal(10, 4, 1.0, rng);
  Matrix head(9, 4);
  for (std::size_t t = 0; t < 9; ++t) std::copy(x.row(t).begin(), x.row(t).end(), head.row(t).begin());
  auto cache = KvCache::empty(4);
  prefill_cache(ref, cache, head);
  EXPECT_EQ(cache.entries(), 9u);
  EXPECT_LE(max_abs_diff(attention_reference_step(ref, cache, x.row(9)), attention_full_forward(ref, x).row(9)), 1e-12);
  EXPECT_EQ(cache.bytes(), 2u * 10 * 4 * sizeof(double));
}

TEST(Scaling, SsmStateConstantAttentionCacheGrows) {
  lm::BackboneConfig cfg;
  cfg.model_dim = 8;
  cfg.state_dim = 4;
  Rng rng(1);
  const auto w = lm::BackboneWeights::init(cfg, rng);
  SweepOptions opts;
  opts.contexts = {16, 64};
  opts.reps = 1;
  opts.steps_per_batch = 8;
  opts.min_batch_us = 0.0;
  const auto s = ssm_scaling_sweep(w, opts);
  ASSERT_EQ(s.points.size(), 2u);
  EXPECT_EQ(s.points[0].state_bytes, s.points[1].state_bytes);
  const auto ref = AttentionReference::init(8, rng);
  const auto a = attention_scaling_sweep(ref, opts);
  EXPECT_EQ(a.points[0].cache_entries, 16u);
  EXPECT_EQ(a.points[1].cache_entries, 64u);
  EXPECT_GT(a.points[1].state_bytes, a.points[0].state_bytes);
  EXPECT_FALSE(format_scaling({s, a}).empty());
}

TEST(Scaling, TimerGuard) {
  Rng rng(2);
  const auto ref = AttentionReference::init(4, rng);
  SweepOptions opts;
  opts.contexts = {4, 8};
  opts.reps = 1;
  opts.steps_per_batch = 1;
  opts.min_batch_us = 1e12;
  EXPECT_THROW(attention_scaling_sweep(ref, opts), TimerResolutionError);
}
