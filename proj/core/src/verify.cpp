#include "cobra/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cobra/bench.hpp"
#include "cobra/trainer.hpp"

namespace cobra::verify {

namespace {

struct SuiteFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Ctx {
  const VerifyOptions& opts;
  std::size_t cases = 0;
  std::string note;

  void expect(bool ok, const std::string& what) {
    ++cases;
    if (!ok) throw SuiteFailure(what);
  }
};

std::string num(double v) {
  std::ostringstream o;
  o.precision(3);
  o << v;
  return o.str();
}

ssm::LtiSsmParams random_stable(std::size_t channels, std::size_t n, Rng& rng) {
  std::uniform_real_distribution<double> a(-2.0, -0.05), bc(-1.0, 1.0), dt(0.01, 0.5);
  ssm::LtiSsmParams p;
  p.delta.resize(channels);
  p.a = Matrix(channels, n);
  p.b = Matrix(channels, n);
  p.c = Matrix(channels, n);
  for (std::size_t ch = 0; ch < channels; ++ch) {
    p.delta[ch] = dt(rng);
    for (std::size_t i = 0; i < n; ++i) {
      p.a(ch, i) = a(rng);
      p.b(ch, i) = bc(rng);
      p.c(ch, i) = bc(rng);
    }
  }
  return p;
}

void suite_container(Ctx& ctx) {
  Rng rng(ctx.opts.seed + 11);
  WeightContainer c;
  c.put("m", random_normal(3, 5, 1.0, rng));
  c.put_vector("v", std::vector<double>{1.5, -2.0, 0.0});
  c.put_scalar("s", 42.0);
  const auto bytes = c.serialize();
  const auto back = WeightContainer::parse(bytes);
  ctx.expect(back.names() == c.names(), "entry order changed across a round trip");
  ctx.expect(back.matrix("m") == c.matrix("m"), "matrix values changed across a round trip");
  ctx.expect(back.serialize() == bytes, "re-serialization is not byte-identical");
  bool threw = false;
  try {
    WeightContainer::parse(std::span(bytes).first(bytes.size() - 1));
  } catch (const FormatError&) {
    threw = true;
  }
  ctx.expect(threw, "truncated container was accepted");
}

void suite_lti(Ctx& ctx) {
  Rng rng(ctx.opts.seed + 1);
  std::uniform_int_distribution<std::size_t> n_dist(1, 8), d_dist(1, 4);
  const std::size_t lengths[] = {1, 64, 257};
  double worst = 0.0;
  for (std::size_t trial = 0; trial < 300; ++trial) {
    const auto p = random_stable(d_dist(rng), n_dist(rng), rng);
    const auto d = ssm::discretize_zoh(p);
    const std::size_t len = lengths[trial % 3];
    const Matrix x = random_normal(len, p.channels(), 1.0, rng);
    auto kernel = ssm::build_kernel(d, len);
    if (ctx.opts.corrupt_kernel) kernel.taps(0, 0) += 0.5;
    const Matrix conv = ssm::convolve_kernel(kernel, x);
    const Matrix rec = ssm::lti_scan_recurrent(d, x).y;
    const double err = max_abs_diff(conv, rec);
    worst = std::max(worst, err);
    ctx.expect(err < 1e-10, "convolution and recurrence differ by " + num(err) + " (trial " +
                                std::to_string(trial) + ", L=" + std::to_string(len) + ")");
  }
  ctx.note = "max err " + num(worst);
}

void suite_zoh(Ctx& ctx) {
  const double cases[][3] = {{0.1, -1.0, 1.0}, {0.5, -0.3, 2.0}, {1.0, -2.0, -0.7}, {0.01, -5.0, 0.3}};
  for (const auto& k : cases) {
    const double dt = k[0], a = k[1], b = k[2];
    const auto d = ssm::discretize_zoh(ssm::LtiSsmParams::scalar(dt, a, b));
    const double a_ref = std::exp(dt * a), b_ref = (std::exp(dt * a) - 1.0) / a * b;
    ctx.expect(std::abs(d.a_bar(0, 0) - a_ref) < 1e-12 && std::abs(d.b_bar(0, 0) - b_ref) < 1e-12,
               "ZOH closed form mismatch at delta=" + num(dt));
  }
  const auto zero = ssm::discretize_zoh(ssm::LtiSsmParams::scalar(0.3, 0.0, 2.0));
  ctx.expect(zero.a_bar(0, 0) == 1.0 && std::abs(zero.b_bar(0, 0) - 0.6) < 1e-15, "A = 0 limit is not delta*B");
  Rng rng(ctx.opts.seed + 8);
  for (std::size_t trial = 0; trial < 100; ++trial) {
    const auto d = ssm::discretize_zoh(random_stable(3, 4, rng));
    double top = 0.0;
    for (const double v : d.a_bar.flat()) top = std::max(top, std::abs(v));
    ctx.expect(top < 1.0, "stable A produced |a_bar| = " + num(top));
  }
  // Euler deviates from the exact rule by O(delta^2): halving delta quarters it.
  auto gap = [](double dt) {
    const auto p = ssm::LtiSsmParams::scalar(dt, -1.3, 0.8);
    const auto z = ssm::discretize_zoh(p), e = ssm::discretize_euler(p);
    return std::abs(z.a_bar(0, 0) - e.a_bar(0, 0)) + std::abs(z.b_bar(0, 0) - e.b_bar(0, 0));
  };
  for (double dt = 0.1; dt > 1e-3; dt /= 2) {
    const double ratio = gap(dt) / gap(dt / 2);
    ctx.expect(ratio > 3.5 && ratio < 4.5, "halving delta changed the Euler gap by " + num(ratio) + ", not ~4");
  }
}

void suite_selective(Ctx& ctx) {
  Rng rng(ctx.opts.seed + 2);
  std::uniform_int_distribution<std::size_t> e_dist(1, 8), n_dist(1, 8), l_dist(1, 1100);
  double worst = 0.0;
  for (std::size_t trial = 0; trial < 40; ++trial) {
    const std::size_t e = e_dist(rng), n = n_dist(rng);
    const std::size_t len = trial == 0 ? 4096 : l_dist(rng);
    const auto rule = trial % 2 ? ssm::BRule::Zoh : ssm::BRule::Euler;
    const auto w = ssm::SelectiveWeights::init(e, n, 1 + trial % 2, rng, rule);
    const Matrix x = random_normal(len, e, 1.0, rng);
    const auto seq = ssm::selective_scan(x, w, ssm::ScanMode::Sequential);
    const auto par = ssm::selective_scan(x, w, ssm::ScanMode::Parallel);
    const double err = std::max(max_abs_diff(seq.y, par.y), max_abs_diff(seq.h_final, par.h_final));
    worst = std::max(worst, err);
    ctx.expect(err < 1e-5, "parallel scan differs by " + num(err) + " at L=" + std::to_string(len));
  }
  ctx.note = "max err " + num(worst);
}

void suite_streaming(Ctx& ctx) {
  lm::BackboneConfig cfg;
  cfg.model_dim = 16;
  cfg.layers = 2;
  cfg.state_dim = 8;
  for (const auto rule : {ssm::BRule::Euler, ssm::BRule::Zoh}) {
    cfg.b_rule = rule;
    Rng rng(ctx.opts.seed + 3);
    const auto w = lm::BackboneWeights::init(cfg, rng);
    const Matrix x = random_normal(64, cfg.model_dim, 1.0, rng);
    const Matrix full = lm::forward_logits(w, x);
    auto states = w.initial_states();
    double worst = 0.0;
    for (std::size_t t = 0; t < x.rows(); ++t) {
      const Vector step = lm::step_logits(w, states, x.row(t));
      for (std::size_t v = 0; v < step.size(); ++v) worst = std::max(worst, std::abs(step[v] - full(t, v)));
    }
    ctx.expect(worst < 1e-6, "step logits differ from the full forward by " + num(worst));
    Matrix bumped = x;
    bumped(x.rows() - 1, 0) += 1.0;
    const Matrix after = lm::forward_logits(w, bumped);
    bool causal = true;
    for (std::size_t t = 0; t + 1 < x.rows(); ++t) {
      for (std::size_t v = 0; v < after.cols(); ++v) causal = causal && after(t, v) == full(t, v);
    }
    ctx.expect(causal, "changing the last input changed earlier logits");
    // Serialized state size does not depend on how many tokens were consumed.
    ctx.expect(states[0].serialized_bytes() == w.initial_states()[0].serialized_bytes(),
               "recurrent state size changed while decoding");
  }
}

// Ridders' extrapolation of central differences over a shrinking step;
// returns the estimate whose tableau error is smallest.
double ridders(const std::function<double(double)>& central, double h = 1e-3) {
  constexpr int kTab = 10;
  constexpr double kCon = 1.4, kCon2 = kCon * kCon, kSafe = 2.0;
  double a[kTab][kTab];
  a[0][0] = central(h);
  double best = a[0][0], err = INFINITY;
  for (int i = 1; i < kTab; ++i) {
    h /= kCon;
    a[0][i] = central(h);
    double fac = kCon2;
    for (int j = 1; j <= i; ++j) {
      a[j][i] = (a[j - 1][i] * fac - a[j - 1][i - 1]) / (fac - 1.0);
      fac *= kCon2;
      const double e = std::max(std::abs(a[j][i] - a[j - 1][i]), std::abs(a[j][i] - a[j - 1][i - 1]));
      if (e <= err) {
        err = e;
        best = a[j][i];
      }
    }
    if (std::abs(a[i][i] - a[i - 1][i - 1]) >= kSafe * err) break;
  }
  return best;
}

void suite_gradient(Ctx& ctx) {
  PipelineConfig pc;
  pc.image_side = 8;
  pc.patch_size = 4;
  pc.dim_a = 2;
  pc.dim_b = 2;
  pc.projector_hidden = 4;
  pc.backbone.vocab = 259;
  pc.backbone.model_dim = 4;
  pc.backbone.state_dim = 4;
  pc.backbone.layers = 1;
  pc.seed = ctx.opts.seed + 4;
  CobraModel m = CobraModel::init(pc);
  const auto sample = train::make_synthetic_dataset(1, 8, ctx.opts.seed)[0];
  const auto features = m.encode(sample.image);
  const std::vector<prompt::TokenId> ids{'a', 'b', 'c', 'd'};

  auto loss_of = [&](const CobraModel& mm) {
    const auto seq = lm::fuse_sequence(mm.project(features).h_v, ids, mm.lm, 2);
    return lm::next_token_loss(lm::forward_logits(mm.lm, seq), seq);
  };
  auto grads = train::ModelGrads::zeros_like(m);
  {
    vision::ProjectorCache cache;
    const auto tok = vision::projector_forward_train(m.projector, features, cache);
    const auto seq = lm::fuse_sequence(tok.h_v, ids, m.lm, 2);
    ctx.expect(seq.length() == 8, "gradient check sequence is not length 8");
    Matrix d_emb;
    lm::loss_and_backward(m.lm, seq, grads.lm, &d_emb);
    Matrix d_vis(seq.visual_count, d_emb.cols());
    for (std::size_t t = 0; t < seq.visual_count; ++t) {
      std::copy(d_emb.row(t).begin(), d_emb.row(t).end(), d_vis.row(t).begin());
    }
    vision::projector_backward(m.projector, cache, d_vis, grads.projector);
  }
  auto params = m.projector.params();
  auto gparams = grads.projector.params();
  for (auto& p : m.lm.params()) params.push_back(p);
  for (auto& g : grads.lm.params()) gparams.push_back(g);
  double worst = 0.0;
  std::string worst_at;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::size_t n = params[i].values.size();
    const std::size_t stride = std::max<std::size_t>(1, n / 5);
    for (std::size_t j = 0; j < n; j += stride) {
      double& v = params[i].values[j];
      const double keep = v;
      const double numeric = ridders([&](double step) {
        v = keep + step;
        const double up = loss_of(m);
        v = keep - step;
        const double down = loss_of(m);
        v = keep;
        return (up - down) / (2 * step);
      });
      const double analytic = gparams[i].values[j];
      const double rel = std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-6});
      if (rel > worst) {
        worst = rel;
        worst_at = params[i].name + "[" + std::to_string(j) + "] a=" + num(analytic) + " n=" + num(numeric);
      }
      ctx.expect(rel < 1e-4, "gradient of " + params[i].name + "[" + std::to_string(j) + "] off by " + num(rel) +
                                 " (analytic " + num(analytic) + ", numeric " + num(numeric) + ")");
    }
  }
  ctx.note = "max rel err " + num(worst) + " at " + worst_at;
}

void suite_tokens(Ctx& ctx) {
  PipelineConfig mlp = PipelineConfig::standard();
  ctx.expect(mlp.grid_side() == 27 && mlp.visual_tokens() == 729, "default pipeline is not 27x27 = 729 tokens");
  PipelineConfig ldp = mlp;
  ldp.projector = vision::ProjectorKind::Ldp;
  ctx.expect(ldp.visual_tokens() == 196, "LDP pipeline is not 14x14 = 196 tokens");
  ctx.expect(vision::ldp_output_side(27, 2) == 14, "stride-2 LDP on 27 is not 14");
  for (const auto& cfg : {mlp, ldp}) {
    PipelineConfig small = cfg;
    small.backbone.model_dim = 8;
    const CobraModel m = CobraModel::init(small);
    const auto f = m.encode(vision::ImageInput::blank(500, 0.5));
    const auto tok = m.project(f);
    ctx.expect(tok.h_v.rows() == cfg.visual_tokens(), "projected token count " + std::to_string(tok.h_v.rows()) +
                                                           " != configured " +
                                                           std::to_string(cfg.visual_tokens()));
  }
  ctx.expect(PipelineConfig::standard_384().visual_tokens() == 576, "384 px / 16 px patches is not 576 tokens");
}

void suite_prompts(Ctx& ctx) {
  using namespace prompt;
  Conversation one = Conversation::single("What is shown?");
  ctx.expect(render_chat(one) == "<|user|>\nWhat is shown?<|endoftext|>\n<|assistant|>\n", "chat single turn");
  Conversation two;
  two.turns = {{Role::User, "Q1"}, {Role::Assistant, "A1"}, {Role::User, "Q2"}};
  ctx.expect(render_chat(two) ==
                 "<|user|>\nQ1<|endoftext|>\n<|assistant|>\nA1<|endoftext|>\n<|user|>\nQ2<|endoftext|>\n"
                 "<|assistant|>\n",
             "chat two turns");
  ctx.expect(render_base(two) == "In:Q1\nOut:A1<|endoftext|>\nIn:Q2\nOut:", "base two turns");
  ctx.expect(parse_chat(render_chat(two)) == two && parse_base(render_base(two)) == two, "render/parse round trip");
  Conversation ocr = Conversation::single("What brand?");
  ocr.ocr = "ACME";
  ocr.ordering = OcrOrdering::OcrFirst;
  const std::string first = render_chat(ocr);
  ocr.ordering = OcrOrdering::OcrLast;
  const std::string last = render_chat(ocr);
  ctx.expect(first.find("Reference OCR token: ACME\nWhat brand?") != std::string::npos, "ocr-first ordering");
  ctx.expect(last.find("What brand?\nReference OCR token: ACME") != std::string::npos, "ocr-last ordering");
  const auto ids = tokenize(render_chat(two));
  ctx.expect(detokenize(ids) == render_chat(two), "tokenize/detokenize round trip");
}

void suite_training(Ctx& ctx) {
  train::TrainConfig cfg;
  cfg.lr = 1e-3;
  const std::size_t total = 200;
  const std::size_t warm = static_cast<std::size_t>(std::ceil(cfg.warmup_ratio * total));
  double prev = -1.0;
  for (std::size_t s = 0; s <= total; ++s) {
    const double lr = train::lr_at(s, total, cfg);
    if (s <= warm) ctx.expect(lr >= prev, "lr not rising during warm-up");
    else ctx.expect(lr <= prev, "lr not decaying after warm-up");
    ctx.expect(lr <= cfg.lr, "lr exceeds its peak");
    prev = lr;
  }
  ctx.expect(train::lr_at(warm, total, cfg) == cfg.lr, "lr does not peak at the end of warm-up");
  ctx.expect(train::lr_at(total, total, cfg) == 0.0, "lr does not reach zero");

  PipelineConfig pc = PipelineConfig::tiny();
  pc.seed = ctx.opts.seed;
  CobraModel m = CobraModel::init(pc);
  auto lm_bytes = [&] {
    WeightContainer c;
    m.lm.save(c, "lm.");
    return c.serialize();
  };
  const auto before = lm_bytes();
  const auto proj_before = m.projector.mlp.w1;
  train::TrainConfig tc;
  tc.lr = 1e-2;
  tc.epochs = 1;
  train::TrainOptions opt;
  opt.variant = train::Variant::PreAlignThenFt;
  opt.prealign_only = true;
  train::train_toy(m, train::make_synthetic_dataset(4, pc.image_side, ctx.opts.seed), tc, opt);
  ctx.expect(lm_bytes() == before, "backbone changed during projector-only training");
  ctx.expect(!(m.projector.mlp.w1 == proj_before), "projector did not change during projector-only training");

  // One full fine-tune step moves both parts; the same seed reproduces it bitwise.
  auto one_step = [&] {
    CobraModel mm = CobraModel::init(pc);
    train::TrainConfig c1;
    c1.lr = 1e-2;
    c1.max_steps = 1;
    c1.warmup_ratio = 0.0;
    const auto res = train::train_toy(mm, train::make_synthetic_dataset(4, pc.image_side, ctx.opts.seed), c1);
    return std::pair{mm.to_container().serialize(), res.curve};
  };
  const CobraModel fresh = CobraModel::init(pc);
  const auto [bytes_a, curve_a] = one_step();
  const auto [bytes_b, curve_b] = one_step();
  ctx.expect(bytes_a == bytes_b, "same seed produced different weights");
  const CobraModel stepped = CobraModel::from_container(WeightContainer::parse(bytes_a));
  ctx.expect(!(stepped.projector.mlp.w2 == fresh.projector.mlp.w2), "fine-tune step left the projector unchanged");
  ctx.expect(!(stepped.lm.blocks[0].out_proj == fresh.lm.blocks[0].out_proj),
             "fine-tune step left the backbone unchanged");
}

void suite_throughput(Ctx& ctx) {
  const auto r = bench::make_report("x", 729, 256, 1.54);
  ctx.expect(std::abs(r.eval_avg - 256.0 / 1.54) == 0.0, "Eval_avg is not n_out / T_total");
  ctx.expect(std::abs(r.eval_avg * r.t_total_s - 256.0) <= 256.0 * 4e-16, "Eval_avg * T_total != n_out");
  bool threw = false;
  try {
    bench::make_report("x", 0, 0, 1.0);
  } catch (const PreconditionError&) {
    threw = true;
  }
  ctx.expect(threw, "n_out = 0 was accepted");
  if (ctx.opts.skip_timing) return;
  PipelineConfig pc = PipelineConfig::tiny();
  const CobraModel m = CobraModel::init(pc);
  bench::ThroughputOptions to;
  to.n_out = 16;
  const auto img = vision::ImageInput::blank(pc.image_side, 0.3);
  const auto rep = bench::measure_throughput(m, &img, prompt::Conversation::single("Describe."),
                                             prompt::Template::Chat, to);
  ctx.expect(rep.output_tokens == 16 && rep.rep_seconds.size() == 5, "throughput run shape");
  ctx.expect(std::abs(rep.eval_avg * rep.t_total_s - 16.0) <= 16.0 * 4e-16, "report identity violated");
}

void suite_attention(Ctx& ctx) {
  Rng rng(ctx.opts.seed + 5);
  const auto ref = bench::AttentionReference::init(16, rng);
  const Matrix x = random_normal(64, 16, 1.0, rng);
  const Matrix full = bench::attention_full_forward(ref, x);
  auto cache = bench::KvCache::empty(16);
  double worst = 0.0;
  for (std::size_t t = 0; t < x.rows(); ++t) {
    const Vector y = bench::attention_reference_step(ref, cache, x.row(t));
    ctx.expect(cache.entries() == t + 1, "cache did not grow by one entry");
    for (std::size_t i = 0; i < y.size(); ++i) worst = std::max(worst, std::abs(y[i] - full(t, i)));
  }
  ctx.expect(worst < 1e-6, "attention decode differs from batch attention by " + num(worst));
}

void suite_scaling(Ctx& ctx) {
  lm::BackboneConfig cfg;
  cfg.model_dim = 64;
  Rng rng(ctx.opts.seed + 6);
  const auto w = lm::BackboneWeights::init(cfg, rng);
  const auto ref = bench::AttentionReference::init(64, rng);
  bench::SweepOptions so;
  so.seed = ctx.opts.seed;
  so.contexts = {256, 1024, 4096};
  so.reps = 5;
  const auto s = bench::ssm_scaling_sweep(w, so);
  const auto a = bench::attention_scaling_sweep(ref, so);
  for (std::size_t i = 0; i < so.contexts.size(); ++i) {
    ctx.expect(s.points[i].state_bytes == s.points[0].state_bytes, "SSM state size depends on context");
    ctx.expect(a.points[i].cache_entries == so.contexts[i], "attention cache is not one entry per position");
  }
  if (ctx.opts.skip_timing) return;
  ctx.expect(s.ratio() < 1.2, "SSM latency ratio 4096/256 is " + num(s.ratio()));
  ctx.expect(a.ratio() > 4.0, "attention latency ratio 4096/256 is only " + num(a.ratio()));
  ctx.note = "ssm ratio " + num(s.ratio()) + ", attention ratio " + num(a.ratio());
}

void suite_vision(Ctx& ctx) {
  auto img = vision::ImageInput::blank(8);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<double>(i);
  const auto grid = vision::patchify(img, 4);
  ctx.expect(grid.patches.rows() == 4 && grid.patches.cols() == 48, "patch grid shape");
  ctx.expect(grid.patches(1, 0) == 4.0 && grid.patches(2, 0) == 32.0, "patch raster order");
  Rng rng(ctx.opts.seed + 7);
  const Matrix r = random_normal(9, 6, 1.0, rng);
  const auto id = vision::project_mlp(r, vision::MlpWeights::identity(6));
  double worst = 0.0;
  for (std::size_t i = 0; i < r.rows(); ++i) {
    for (std::size_t j = 0; j < r.cols(); ++j) worst = std::max(worst, std::abs(id.h_v(i, j) - gelu(r(i, j))));
  }
  ctx.expect(worst < 1e-15, "identity-layer MLP is not gelu(x)");
  const Matrix pooled = vision::adaptive_avg_pool(r, 3, 1);
  double mean = 0.0;
  for (std::size_t i = 0; i < 9; ++i) mean += r(i, 0) / 9.0;
  ctx.expect(std::abs(pooled(0, 0) - mean) < 1e-14, "1x1 pool is not the mean");
  const auto enc_a = vision::ToyEncoderWeights::init(4, 3, 1), enc_b = vision::ToyEncoderWeights::init(4, 5, 2);
  const auto ab = vision::encode_dual(grid, enc_a, enc_b), ba = vision::encode_dual(grid, enc_b, enc_a);
  bool permuted = ab.r_v.cols() == 8;
  for (std::size_t i = 0; i < ab.r_v.rows(); ++i) {
    for (std::size_t j = 0; j < 8; ++j) permuted = permuted && ab.r_v(i, j) == ba.r_v(i, (j + 5) % 8);
  }
  ctx.expect(permuted, "swapping encoders is not a column permutation");
}

struct Suite {
  const char* name;
  std::function<void(Ctx&)> run;
};

const std::vector<Suite>& suites() {
  static const std::vector<Suite> all{
      {"container_roundtrip", suite_container},   {"lti_equivalence", suite_lti},
      {"zoh_discretization", suite_zoh},          {"selective_scan_equivalence", suite_selective},
      {"streaming_equivalence", suite_streaming}, {"gradient_check", suite_gradient},
      {"visual_tokens", suite_tokens},            {"vision_projectors", suite_vision},
      {"prompt_fidelity", suite_prompts},         {"training_recipe", suite_training},
      {"throughput_report", suite_throughput},    {"attention_reference", suite_attention},
      {"decode_scaling", suite_scaling},
  };
  return all;
}

}  // namespace

std::vector<std::string> suite_names() {
  std::vector<std::string> out;
  for (const auto& s : suites()) out.emplace_back(s.name);
  return out;
}

VerifyReport run_verify(const VerifyOptions& opts) {
  VerifyReport report;
  for (const auto& s : suites()) {
    if (!opts.only.empty() && std::find(opts.only.begin(), opts.only.end(), s.name) == opts.only.end()) continue;
    Ctx ctx{opts, 0, {}};
    SuiteResult r;
    r.name = s.name;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      s.run(ctx);
      r.passed = true;
      r.detail = ctx.note;
    } catch (const std::exception& e) {
      r.passed = false;
      r.detail = e.what();
    }
    r.cases = ctx.cases;
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.suites.push_back(std::move(r));
  }
  return report;
}

bool VerifyReport::passed() const {
  return std::all_of(suites.begin(), suites.end(), [](const SuiteResult& r) { return r.passed; });
}

std::string VerifyReport::text() const {
  std::ostringstream out;
  std::size_t failed = 0;
  for (const auto& r : suites) {
    failed += !r.passed;
    out << (r.passed ? "PASS " : "FAIL ") << r.name << " (" << r.cases << " checks, " << num(r.seconds) << " s)";
    if (!r.detail.empty()) out << ": " << r.detail;
    out << "\n";
  }
  out << (failed ? "verify: " + std::to_string(failed) + " suite(s) failed\n" : "verify: all suites passed\n");
  return out.str();
}

std::string VerifyReport::json() const {
  nlohmann::json j;
  j["passed"] = passed();
  j["suites"] = nlohmann::json::array();
  for (const auto& r : suites) {
    j["suites"].push_back(
        {{"name", r.name}, {"passed", r.passed}, {"cases", r.cases}, {"seconds", r.seconds}, {"detail", r.detail}});
  }
  return j.dump(2);
}

}  // namespace cobra::verify
