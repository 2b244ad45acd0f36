#include "cobra/bench.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>

namespace cobra::bench {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

AttentionReference AttentionReference::init(std::size_t dim, Rng& rng) {
  if (dim == 0) throw ShapeError("attention dim must be > 0");
  const double s = 1.0 / std::sqrt(static_cast<double>(dim));
  return {random_normal(dim, dim, s, rng), random_normal(dim, dim, s, rng), random_normal(dim, dim, s, rng),
          random_normal(dim, dim, s, rng)};
}

KvCache KvCache::empty(std::size_t dim, std::size_t reserve) {
  KvCache c;
  c.dim = dim;
  c.keys.reserve(reserve * dim);
  c.values.reserve(reserve * dim);
  return c;
}

namespace {

void append_kv(const AttentionReference& ref, KvCache& cache, std::span<const double> x_t) {
  const std::size_t d = ref.dim();
  const std::size_t at = cache.keys.size();
  cache.keys.resize(at + d);
  cache.values.resize(at + d);
  matvec(ref.wk, x_t, std::span<double>(cache.keys).subspan(at, d));
  matvec(ref.wv, x_t, std::span<double>(cache.values).subspan(at, d));
}

// Attends q over the first n cache entries.
Vector attend(const AttentionReference& ref, const KvCache& cache, std::size_t n, std::span<const double> q) {
  const std::size_t d = ref.dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  Vector scores(n);
  double top = -INFINITY;
  for (std::size_t j = 0; j < n; ++j) {
    const double* k = cache.keys.data() + j * d;
    double dot = 0.0;
    for (std::size_t i = 0; i < d; ++i) dot += q[i] * k[i];
    scores[j] = dot * scale;
    top = std::max(top, scores[j]);
  }
  double z = 0.0;
  for (auto& s : scores) z += (s = std::exp(s - top));
  Vector mixed(d, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    const double p = scores[j] / z;
    const double* v = cache.values.data() + j * d;
    for (std::size_t i = 0; i < d; ++i) mixed[i] += p * v[i];
  }
  Vector y(d);
  matvec(ref.wo, mixed, y);
  return y;
}

}  // namespace

Vector attention_reference_step(const AttentionReference& ref, KvCache& cache, std::span<const double> x_t) {
  const std::size_t d = ref.dim();
  if (x_t.size() != d) {
    throw ShapeError("attention step: input has " + std::to_string(x_t.size()) + " values, expected " +
                     std::to_string(d));
  }
  if (cache.dim != d || cache.keys.size() != cache.values.size() || cache.keys.size() % d != 0) {
    throw ShapeError("attention step: cache does not match the reference width");
  }
  append_kv(ref, cache, x_t);
  Vector q(d);
  matvec(ref.wq, x_t, q);
  return attend(ref, cache, cache.entries(), q);
}

Matrix attention_full_forward(const AttentionReference& ref, const Matrix& x) {
  const std::size_t d = ref.dim();
  if (x.cols() != d) throw ShapeError("attention forward: input width mismatch");
  // Projections for the whole sequence first, then masked attention per row.
  KvCache cache = KvCache::empty(d, x.rows());
  prefill_cache(ref, cache, x);
  Matrix y(x.rows(), d);
  Vector q(d);
  for (std::size_t t = 0; t < x.rows(); ++t) {
    matvec(ref.wq, x.row(t), q);
    const Vector out = attend(ref, cache, t + 1, q);
    std::copy(out.begin(), out.end(), y.row(t).begin());
  }
  return y;
}

void prefill_cache(const AttentionReference& ref, KvCache& cache, const Matrix& x) {
  if (x.cols() != ref.dim() || cache.dim != ref.dim()) throw ShapeError("prefill_cache: width mismatch");
  for (std::size_t t = 0; t < x.rows(); ++t) append_kv(ref, cache, x.row(t));
}

ThroughputReport make_report(std::string tag, std::size_t visual_tokens, std::size_t output_tokens,
                             double t_total_s) {
  if (output_tokens == 0) throw PreconditionError("throughput: no output tokens to measure");
  if (!(t_total_s > 0.0) || !std::isfinite(t_total_s)) throw PreconditionError("throughput: T_total must be > 0");
  ThroughputReport r;
  r.model_tag = std::move(tag);
  r.visual_tokens = visual_tokens;
  r.requested_tokens = output_tokens;
  r.output_tokens = output_tokens;
  r.t_total_s = t_total_s;
  r.eval_avg = static_cast<double>(output_tokens) / t_total_s;
  return r;
}

double median(std::vector<double> xs) {
  if (xs.empty()) throw PreconditionError("median of an empty series");
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

ThroughputReport measure_throughput(const CobraModel& model, const vision::ImageInput* image,
                                    const prompt::Conversation& conv, prompt::Template tmpl,
                                    const ThroughputOptions& opts) {
  if (opts.n_out == 0) throw PreconditionError("throughput: n_out must be > 0");
  if (opts.reps == 0) throw PreconditionError("throughput: at least one repetition is required");
  lm::SamplingConfig sampling;
  sampling.max_new = opts.n_out;
  sampling.ignore_stop = opts.force_length;

  struct Run {
    double seconds;
    std::size_t tokens;
    std::size_t visual;
    std::vector<double> latencies;
  };
  auto run_once = [&] {
    const auto t0 = Clock::now();
    vision::VisualFeatures features;
    if (image) features = model.encode(*image);
    const auto prepared = prepare_prompt(model, image ? &features : nullptr, conv, tmpl);
    lm::GenerationSession session(model.lm, sampling);
    const auto tokens = lm::generate(session, prepared.sequence, model.lm);
    Run r{seconds_since(t0), tokens.size(), prepared.sequence.visual_count, {}};
    for (const auto& e : session.trace()) r.latencies.push_back(e.latency_us);
    return r;
  };

  for (std::size_t i = 0; i < opts.warmup; ++i) run_once();
  std::vector<Run> runs;
  for (std::size_t i = 0; i < opts.reps; ++i) runs.push_back(run_once());
  std::vector<double> secs;
  for (const auto& r : runs) secs.push_back(r.seconds);
  const double t_med = median(secs);
  // Keep the series of the run closest to the median.
  const auto& mid = *std::min_element(runs.begin(), runs.end(), [&](const Run& a, const Run& b) {
    return std::abs(a.seconds - t_med) < std::abs(b.seconds - t_med);
  });

  // Greedy decoding is deterministic, so every run emits the same count.
  ThroughputReport rep = make_report(opts.tag, mid.visual, mid.tokens, t_med);
  rep.requested_tokens = opts.n_out;
  rep.short_generation = mid.tokens < opts.n_out;
  rep.rep_seconds = secs;
  rep.token_latency_us = mid.latencies;
  return rep;
}

double ScalingTable::ratio() const {
  if (points.size() < 2) throw PreconditionError("scaling ratio needs at least two contexts");
  const auto [lo, hi] = std::minmax_element(points.begin(), points.end(),
                                            [](const auto& a, const auto& b) { return a.context < b.context; });
  return hi->latency_us / lo->latency_us;
}

double least_squares_slope(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size() || xs.size() < 2) throw PreconditionError("slope needs >= 2 matched points");
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
  }
  if (sxx == 0.0) throw PreconditionError("slope needs at least two distinct x values");
  return sxy / sxx;
}

namespace {

void check_sweep(const SweepOptions& opts) {
  if (opts.contexts.size() < 2) throw PreconditionError("sweep needs at least two contexts");
  if (opts.steps_per_batch == 0 || opts.reps == 0) throw PreconditionError("sweep needs steps and reps > 0");
}

void check_resolution(double batch_us, const SweepOptions& opts) {
  if (batch_us < opts.min_batch_us) {
    throw TimerResolutionError("a batch of " + std::to_string(opts.steps_per_batch) + " steps took " +
                               fixed(batch_us, 3) + " us, below the " + fixed(opts.min_batch_us, 1) +
                               " us resolution floor; increase steps_per_batch to amortize");
  }
}

void finish(ScalingTable& t) {
  std::vector<double> xs, ys;
  for (const auto& p : t.points) {
    xs.push_back(static_cast<double>(p.context));
    ys.push_back(p.latency_us);
  }
  t.slope_us_per_token = least_squares_slope(xs, ys);
}

// Times every context once per repetition, round-robin with a rotating start,
// so slow periods of a shared machine land on all contexts alike. Noise only
// ever adds time, so each context keeps its fastest batch. `run(i)` returns
// the microseconds for one batch at context i.
std::vector<double> interleaved_latency(std::size_t n_ctx, const SweepOptions& opts,
                                        const std::function<double(std::size_t)>& run) {
  std::vector<double> best(n_ctx, INFINITY);
  for (std::size_t r = 0; r < opts.reps; ++r) {
    for (std::size_t j = 0; j < n_ctx; ++j) {
      const std::size_t i = (j + r) % n_ctx;
      const double us = run(i);
      check_resolution(us, opts);
      best[i] = std::min(best[i], us / static_cast<double>(opts.steps_per_batch));
    }
  }
  return best;
}

}  // namespace

ScalingTable ssm_scaling_sweep(const lm::BackboneWeights& w, const SweepOptions& opts) {
  check_sweep(opts);
  ScalingTable table{"ssm", {}, 0.0};
  Rng rng(opts.seed);
  std::uniform_int_distribution<int> tok(0, 255);
  std::vector<lm::GenerationSession> bases;
  for (const std::size_t ctx : opts.contexts) {
    Matrix prompt(ctx, w.config.model_dim);
    for (std::size_t t = 0; t < ctx; ++t) {
      const auto e = w.embedding.row(static_cast<std::size_t>(tok(rng)));
      std::copy(e.begin(), e.end(), prompt.row(t).begin());
    }
    bases.emplace_back(w, lm::SamplingConfig{});
    bases.back().prefill(w, prompt);
  }
  const auto latency = interleaved_latency(bases.size(), opts, [&](std::size_t i) {
    lm::GenerationSession s = bases[i];  // copied outside the timed region
    const auto t0 = Clock::now();
    for (std::size_t k = 0; k < opts.steps_per_batch; ++k) s.step(w, static_cast<lm::TokenId>(k & 0xff));
    return seconds_since(t0) * 1e6;
  });
  for (std::size_t i = 0; i < bases.size(); ++i) {
    table.points.push_back({opts.contexts[i], latency[i], bases[i].serialized_state_bytes(), 0});
  }
  finish(table);
  return table;
}

ScalingTable attention_scaling_sweep(const AttentionReference& ref, const SweepOptions& opts) {
  check_sweep(opts);
  ScalingTable table{"attention", {}, 0.0};
  Rng rng(opts.seed);
  const std::size_t d = ref.dim();
  const Matrix step_inputs = random_normal(opts.steps_per_batch, d, 1.0, rng);
  std::vector<KvCache> bases;
  for (const std::size_t ctx : opts.contexts) {
    bases.push_back(KvCache::empty(d, ctx));
    prefill_cache(ref, bases.back(), random_normal(ctx, d, 1.0, rng));
  }
  double sink = 0.0;
  const auto latency = interleaved_latency(bases.size(), opts, [&](std::size_t i) {
    KvCache cache = KvCache::empty(d, bases[i].entries() + opts.steps_per_batch);
    cache.keys.insert(cache.keys.end(), bases[i].keys.begin(), bases[i].keys.end());
    cache.values.insert(cache.values.end(), bases[i].values.begin(), bases[i].values.end());
    const auto t0 = Clock::now();
    for (std::size_t k = 0; k < opts.steps_per_batch; ++k) {
      sink += attention_reference_step(ref, cache, step_inputs.row(k))[0];
    }
    return seconds_since(t0) * 1e6;
  });
  if (!std::isfinite(sink)) throw StateError("attention sweep produced non-finite output");
  for (std::size_t i = 0; i < bases.size(); ++i) {
    table.points.push_back({opts.contexts[i], latency[i], bases[i].bytes(), bases[i].entries()});
  }
  finish(table);
  return table;
}

std::string format_table(const std::vector<ThroughputReport>& reports) {
  std::vector<std::array<std::string, 4>> rows{{"Model", "Visual tokens", "Eval_avg (tok/s)", "Total (s)"}};
  for (const auto& r : reports) {
    rows.push_back({r.model_tag + (r.short_generation ? " (short)" : ""), std::to_string(r.visual_tokens),
                    fixed(r.eval_avg, 2), fixed(r.t_total_s, 4)});
  }
  std::array<std::size_t, 4> width{};
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < 4; ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t c = 0; c < 4; ++c) {
      const auto& cell = rows[i][c];
      const std::string pad(width[c] - cell.size(), ' ');
      out << (c ? "  " : "") << (c == 0 ? cell + pad : pad + cell);
    }
    out << "\n";
    if (i == 0) {
      std::size_t total = 6;
      for (auto w : width) total += w;
      out << std::string(total, '-') << "\n";
    }
  }
  return out.str();
}

std::string reports_csv(const std::vector<ThroughputReport>& reports) {
  std::ostringstream out;
  out.precision(17);
  out << "model,visual_tokens,requested_tokens,output_tokens,t_total_s,eval_avg,short\n";
  for (const auto& r : reports) {
    out << r.model_tag << "," << r.visual_tokens << "," << r.requested_tokens << "," << r.output_tokens << ","
        << r.t_total_s << "," << r.eval_avg << "," << (r.short_generation ? 1 : 0) << "\n";
  }
  return out.str();
}

std::string scaling_csv(const std::vector<ScalingTable>& tables) {
  std::ostringstream out;
  out.precision(10);
  out << "subject,context,latency_us,state_bytes,cache_entries\n";
  for (const auto& t : tables) {
    for (const auto& p : t.points) {
      out << t.subject << "," << p.context << "," << p.latency_us << "," << p.state_bytes << "," << p.cache_entries
          << "\n";
    }
  }
  return out.str();
}

std::string format_scaling(const std::vector<ScalingTable>& tables) {
  std::ostringstream out;
  for (const auto& t : tables) {
    out << t.subject << ": slope " << fixed(t.slope_us_per_token * 1000.0, 4) << " ns/token of context, ratio "
        << fixed(t.ratio(), 3) << "\n";
    for (const auto& p : t.points) {
      out << "  ctx " << p.context << "  " << fixed(p.latency_us, 3) << " us/token  state " << p.state_bytes
          << " B";
      if (t.subject == "attention") out << "  entries " << p.cache_entries;
      out << "\n";
    }
  }
  return out.str();
}

}  // namespace cobra::bench
