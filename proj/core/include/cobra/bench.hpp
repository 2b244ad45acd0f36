#pragma once

// Throughput measurement and decode-latency scaling against a minimal
// causal-attention baseline.

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cobra/model.hpp"

namespace cobra::bench {

// Single-layer, single-head causal softmax attention. Only used as a
// scaling baseline for the recurrent decoder.
struct AttentionReference {
  Matrix wq, wk, wv, wo;  // each dim x dim

  std::size_t dim() const { return wq.rows(); }
  static AttentionReference init(std::size_t dim, Rng& rng);
};

// Keys and values of every position seen so far, row-major (entries x dim).
struct KvCache {
  std::size_t dim = 0;
  std::vector<double> keys;
  std::vector<double> values;

  static KvCache empty(std::size_t dim, std::size_t reserve = 0);
  std::size_t entries() const { return dim ? keys.size() / dim : 0; }
  std::size_t bytes() const { return (keys.size() + values.size()) * sizeof(double); }
};

// One decode step: appends x_t's key/value, attends over the whole cache.
Vector attention_reference_step(const AttentionReference& ref, KvCache& cache, std::span<const double> x_t);
// Batch causal attention over all rows of x (the oracle for the step path).
Matrix attention_full_forward(const AttentionReference& ref, const Matrix& x);
// Fills the cache for a context without computing outputs.
void prefill_cache(const AttentionReference& ref, KvCache& cache, const Matrix& x);

struct ThroughputReport {
  std::string model_tag;
  std::size_t visual_tokens = 0;
  std::size_t requested_tokens = 0;
  std::size_t output_tokens = 0;
  double t_total_s = 0.0;
  double eval_avg = 0.0;  // output_tokens / t_total_s
  bool short_generation = false;
  std::vector<double> rep_seconds;
  std::vector<double> token_latency_us;
  std::vector<std::size_t> contexts;
};

// Builds a report from raw numbers; T must be > 0 and n_out > 0.
ThroughputReport make_report(std::string tag, std::size_t visual_tokens, std::size_t output_tokens,
                             double t_total_s);

struct ThroughputOptions {
  std::string tag = "cobra-toy";
  std::size_t n_out = 256;
  std::size_t reps = 5;
  std::size_t warmup = 1;
  // Decode past the stop token so every run emits exactly n_out tokens.
  bool force_length = true;
};

// Greedy generation timed from image encoding to the last token; the
// reported T is the median of `reps` runs after `warmup` discarded ones.
ThroughputReport measure_throughput(const CobraModel& model, const vision::ImageInput* image,
                                    const prompt::Conversation& conv, prompt::Template tmpl,
                                    const ThroughputOptions& opts = {});

struct ScalingPoint {
  std::size_t context = 0;
  double latency_us = 0.0;  // fastest per-token decode latency over the repetitions
  std::size_t state_bytes = 0;
  std::size_t cache_entries = 0;
};

struct ScalingTable {
  std::string subject;
  std::vector<ScalingPoint> points;
  double slope_us_per_token = 0.0;

  // Latency at the largest context over latency at the smallest.
  double ratio() const;
};

struct SweepOptions {
  std::vector<std::size_t> contexts{256, 512, 1024, 2048, 4096};
  std::size_t steps_per_batch = 64;
  std::size_t reps = 9;
  double min_batch_us = 20.0;
  std::uint64_t seed = 0;
};

ScalingTable ssm_scaling_sweep(const lm::BackboneWeights& w, const SweepOptions& opts = {});
ScalingTable attention_scaling_sweep(const AttentionReference& ref, const SweepOptions& opts = {});

double least_squares_slope(std::span<const double> xs, std::span<const double> ys);
double median(std::vector<double> xs);

// Aligned table with the columns model / visual tokens / Eval_avg / total s.
std::string format_table(const std::vector<ThroughputReport>& reports);
std::string reports_csv(const std::vector<ThroughputReport>& reports);
std::string scaling_csv(const std::vector<ScalingTable>& tables);
std::string format_scaling(const std::vector<ScalingTable>& tables);

}  // namespace cobra::bench
