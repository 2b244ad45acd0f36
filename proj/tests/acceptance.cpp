// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>
#include <string>

#include "cobra/bench.hpp"
#include "cobra/trainer.hpp"

using namespace cobra;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Criterion {
  int id;
  std::string title;
  bool ok = true;
  std::string detail;

  void expect(bool cond, const std::string& why) {
    if (!cond && ok) detail = why;
    ok = ok && cond;
  }
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

int failures = 0;

void report(const Criterion& c, const std::string& summary) {
  std::printf("%s [%d] %s: %s\n", c.ok ? "PASS" : "FAIL", c.id, c.title.c_str(),
              c.ok ? summary.c_str() : c.detail.c_str());
  std::fflush(stdout);
  if (!c.ok) ++failures;
}

template <typename F>
void guarded(Criterion& c, F&& body) {
  try {
    body();
  } catch (const std::exception& e) {
    c.expect(false, std::string("threw: ") + e.what());
    report(c, "");
  }
}

// Scalar zero-order hold straight from the matrix exponential of the
// augmented system [[a, b], [0, 0]] * delta.
std::pair<double, double> zoh_via_augmented_exp(double delta, double a, double b) {
  // exp([[x, y], [0, 0]]) = [[e^x, y (e^x - 1) / x], [0, 1]], computed here by
  // a 40-term Taylor series so it does not share the closed form.
  double m00 = 1.0, m01 = 0.0, t00 = 1.0, t01 = 0.0;
  const double x = a * delta, y = b * delta;
  for (int k = 1; k < 40; ++k) {
    const double n00 = t00 * x / k;
    const double n01 = t00 * y / k;
    t00 = n00;
    t01 = n01;
    m00 += t00;
    m01 += t01;
  }
  return {m00, m01};
}

// ---------------------------------------------------------------------------

void criterion_lti() {
  Criterion c{1, "LTI convolution equals recurrence"};
  guarded(c, [&] {
    const auto t0 = Clock::now();
    Rng rng(101);
    std::uniform_int_distribution<int> n_dist(1, 8), d_dist(1, 4);
    std::uniform_real_distribution<double> neg(-3.0, -0.05), dt(1e-3, 0.5), u(-1.0, 1.0);
    const std::size_t lengths[] = {1, 64, 257};
    double worst = 0.0, worst_oracle = 0.0;
    std::size_t systems = 0;
    for (; systems < 1200; ++systems) {
      const std::size_t n = n_dist(rng), d = d_dist(rng), len = lengths[systems % 3];
      ssm::LtiSsmParams p;
      p.delta.resize(d);
      p.a = Matrix(d, n);
      p.b = Matrix(d, n);
      p.c = Matrix(d, n);
      for (auto& v : p.delta) v = dt(rng);
      for (auto& v : p.a.flat()) v = neg(rng);
      for (auto& v : p.b.flat()) v = u(rng);
      for (auto& v : p.c.flat()) v = u(rng);
      const auto disc = ssm::discretize_zoh(p);
      const Matrix x = random_normal(len, d, 1.0, rng);
      const Matrix yc = ssm::lti_forward_convolutional(disc, x);
      const Matrix yr = ssm::lti_scan_recurrent(disc, x).y;
      worst = std::max(worst, max_abs_diff(yc, yr));
      // Independent recurrence on the test's own discretisation.
      if (systems % 10 == 0) {
        for (std::size_t ch = 0; ch < d; ++ch) {
          std::vector<double> h(n, 0.0);
          for (std::size_t t = 0; t < len; ++t) {
            double y = 0.0;
            for (std::size_t k = 0; k < n; ++k) {
              const auto [ab, bb] = zoh_via_augmented_exp(p.delta[ch], p.a(ch, k), p.b(ch, k));
              h[k] = ab * h[k] + bb * x(t, ch);
              y += p.c(ch, k) * h[k];
            }
            worst_oracle = std::max(worst_oracle, std::abs(y - yr(t, ch)));
          }
        }
      }
    }
    const double secs = seconds_since(t0);
    c.expect(worst < 1e-10, "max |conv - recurrent| = " + fmt(worst));
    c.expect(worst_oracle < 1e-10, "recurrence differs from the independent oracle by " + fmt(worst_oracle));
    c.expect(secs < 30.0, "took " + fmt(secs) + " s");
    report(c, std::to_string(systems) + " systems, max diff " + fmt(worst) + ", oracle diff " + fmt(worst_oracle) +
                  ", " + fmt(secs) + " s");
  });
}

void criterion_selective() {
  Criterion c{2, "Selective scan parallel equals sequential"};
  guarded(c, [&] {
    const auto t0 = Clock::now();
    Rng rng(202);
    const std::size_t lengths[] = {1, 2, 3, 7, 64, 100, 255, 257, 1000, 1023, 2049, 3001, 4095, 4096};
    double worst = 0.0, worst_oracle = 0.0;
    std::size_t configs = 0, longest = 0;
    for (; configs < 112; ++configs) {
      const std::size_t len = lengths[configs % std::size(lengths)];
      const std::size_t ch = 1 + rng() % 4, n = 1 + rng() % 8, r = 1 + rng() % 2;
      const auto rule = configs % 2 ? ssm::BRule::Zoh : ssm::BRule::Euler;
      const auto w = ssm::SelectiveWeights::init(ch, n, r, rng, rule);
      const Matrix x = random_normal(len, ch, 1.0, rng);
      const auto seq = ssm::selective_scan(x, w, ssm::ScanMode::Sequential);
      const auto par = ssm::selective_scan(x, w, ssm::ScanMode::Parallel);
      worst = std::max({worst, max_abs_diff(seq.y, par.y), max_abs_diff(seq.h_final, par.h_final)});
      longest = std::max(longest, len);
      // Hand-rolled recurrence from the per-step parameters.
      if (len <= 257) {
        const Matrix a = w.a();
        Matrix h(ch, n);
        for (std::size_t t = 0; t < len; ++t) {
          const auto s = ssm::selective_parameterize(x.row(t), w);
          for (std::size_t i = 0; i < ch; ++i) {
            double y = 0.0;
            for (std::size_t k = 0; k < n; ++k) {
              const double z = s.delta[i] * a(i, k);
              const double ab = std::exp(z);
              const double bb = rule == ssm::BRule::Zoh ? std::expm1(z) / a(i, k) * s.b[k] : s.delta[i] * s.b[k];
              h(i, k) = ab * h(i, k) + bb * x(t, i);
              y += s.c[k] * h(i, k);
            }
            worst_oracle = std::max(worst_oracle, std::abs(y - par.y(t, i)));
          }
        }
      }
    }
    const double secs = seconds_since(t0);
    c.expect(worst < 1e-5, "max |parallel - sequential| = " + fmt(worst));
    c.expect(worst_oracle < 1e-5, "scan differs from the hand recurrence by " + fmt(worst_oracle));
    c.expect(longest == 4096, "longest length " + std::to_string(longest));
    c.expect(secs < 60.0, "took " + fmt(secs) + " s");
    report(c, std::to_string(configs) + " configs up to L=" + std::to_string(longest) + ", max diff " + fmt(worst) +
                  ", oracle diff " + fmt(worst_oracle) + ", " + fmt(secs) + " s");
  });
}

void criterion_zoh() {
  Criterion c{3, "ZOH discretisation"};
  guarded(c, [&] {
    Rng rng(303);
    std::uniform_real_distribution<double> neg(-4.0, -0.01), dt(1e-4, 1.0), u(-2.0, 2.0);
    double worst = 0.0;
    for (int i = 0; i < 2000; ++i) {
      const double d = dt(rng), a = neg(rng), b = u(rng);
      const auto disc = ssm::discretize_zoh(ssm::LtiSsmParams::scalar(d, a, b));
      const double ab = std::exp(d * a);
      const double bb = (std::exp(d * a) - 1.0) / a * b;
      worst = std::max({worst, std::abs(disc.a_bar(0, 0) - ab), std::abs(disc.b_bar(0, 0) - bb)});
    }
    c.expect(worst < 1e-12, "closed form mismatch " + fmt(worst));
    // Halving delta quarters the ZOH - Euler gap on A_bar.
    const double a = -1.5, b = 0.7;
    std::vector<double> ratios;
    double prev = 0.0;
    for (int k = 0; k < 8; ++k) {
      const double d = 0.2 / std::pow(2.0, k);
      const auto p = ssm::LtiSsmParams::scalar(d, a, b);
      const double gap = std::abs(ssm::discretize_zoh(p).a_bar(0, 0) - ssm::discretize_euler(p).a_bar(0, 0));
      if (k) ratios.push_back(prev / gap);
      prev = gap;
    }
    for (double r : ratios) c.expect(std::abs(r - 4.0) < 0.4, "halving ratio " + fmt(r) + " is not ~4");
    report(c, "closed-form max diff " + fmt(worst) + ", halving ratios " + fmt(ratios.front()) + " .. " +
                  fmt(ratios.back()));
  });
}

void criterion_streaming() {
  Criterion c{4, "Streaming logits equal full forward"};
  guarded(c, [&] {
    lm::BackboneConfig cfg;
    cfg.vocab = 300;
    cfg.model_dim = 16;
    cfg.layers = 2;
    double worst = 0.0;
    for (const auto rule : {ssm::BRule::Euler, ssm::BRule::Zoh}) {
      cfg.b_rule = rule;
      Rng rng(404);
      const auto w = lm::BackboneWeights::init(cfg, rng);
      // Greedy decode: 8 prompt tokens, 56 generated, L = 64.
      const auto prompt_ids = prompt::tokenize("stream:");
      std::vector<prompt::TokenId> ids(prompt_ids.begin(), prompt_ids.end());
      ids.push_back('x');
      const auto prompt_seq = lm::fuse_sequence(Matrix(0, cfg.model_dim), ids, w);
      lm::SamplingConfig sc;
      sc.ignore_stop = true;
      lm::GenerationSession session(w, sc);
      std::vector<Vector> step_logits{session.prefill(w, prompt_seq.embeddings)};
      while (ids.size() < 64) {
        const auto& last = step_logits.back();
        const auto tok = static_cast<prompt::TokenId>(std::max_element(last.begin(), last.end()) - last.begin());
        ids.push_back(tok);
        step_logits.push_back(session.step(w, tok));
      }
      const auto full_seq = lm::fuse_sequence(Matrix(0, cfg.model_dim), ids, w);
      const Matrix full = lm::forward_logits(w, full_seq);
      c.expect(full.rows() == 64, "sequence length " + std::to_string(full.rows()));
      // step_logits[k] predicts position 8 + k, i.e. row 7 + k of the full pass.
      for (std::size_t k = 0; k < step_logits.size() && 7 + k < full.rows(); ++k) {
        worst = std::max(worst, max_abs_diff(step_logits[k], full.row(7 + k)));
      }
      // Raw embeddings through the per-token path.
      const Matrix x = random_normal(64, cfg.model_dim, 1.0, rng);
      const Matrix fx = lm::forward_logits(w, x);
      auto states = w.initial_states();
      for (std::size_t t = 0; t < 64; ++t) worst = std::max(worst, max_abs_diff(lm::step_logits(w, states, x.row(t)), fx.row(t)));
    }
    c.expect(worst < 1e-6, "max |step - full| = " + fmt(worst));
    report(c, "D=16, 2 layers, L=64, Euler and ZOH, max diff " + fmt(worst));
  });
}

// Ridders' polynomial extrapolation of central differences.
double ridders_derivative(const std::function<double(double)>& f, double x0) {
  const int ntab = 10;
  const double con = 1.4, con2 = con * con, safe = 2.0;
  double h = 1e-3;
  std::vector<std::vector<double>> a(ntab, std::vector<double>(ntab));
  auto central = [&](double step) { return (f(x0 + step) - f(x0 - step)) / (2 * step); };
  a[0][0] = central(h);
  double best = a[0][0], err = 1e300;
  for (int i = 1; i < ntab; ++i) {
    h /= con;
    a[0][i] = central(h);
    double fac = con2;
    for (int j = 1; j <= i; ++j) {
      a[j][i] = (a[j - 1][i] * fac - a[j - 1][i - 1]) / (fac - 1.0);
      fac *= con2;
      const double e = std::max(std::abs(a[j][i] - a[j - 1][i]), std::abs(a[j][i] - a[j - 1][i - 1]));
      if (e <= err) {
        err = e;
        best = a[j][i];
      }
    }
    if (std::abs(a[i][i] - a[i - 1][i - 1]) >= safe * err) break;
  }
  return best;
}

void criterion_gradient() {
  Criterion c{5, "Analytic gradients match finite differences"};
  guarded(c, [&] {
    PipelineConfig pc;
    pc.image_side = 8;
    pc.patch_size = 4;
    pc.dim_a = 3;
    pc.dim_b = 2;
    pc.projector_hidden = 5;
    pc.backbone.vocab = 259;
    pc.backbone.model_dim = 4;
    pc.backbone.state_dim = 4;
    pc.backbone.layers = 1;
    pc.backbone.b_rule = ssm::BRule::Zoh;
    pc.seed = 505;
    CobraModel m = CobraModel::init(pc);
    const auto sample = train::make_synthetic_dataset(1, 8, 505)[0];
    const auto feats = m.encode(sample.image);
    const std::vector<prompt::TokenId> ids{'r', 'e', 'd', prompt::kEndOfText};  // 4 visual + 4 text = 8

    auto loss_of = [&] {
      const auto seq = lm::fuse_sequence(m.project(feats).h_v, ids, m.lm, 3);
      return lm::next_token_loss(lm::forward_logits(m.lm, seq), seq);
    };
    auto grads = train::ModelGrads::zeros_like(m);
    vision::ProjectorCache cache;
    const auto tok = vision::projector_forward_train(m.projector, feats, cache);
    const auto seq = lm::fuse_sequence(tok.h_v, ids, m.lm, 3);
    c.expect(seq.length() == 8, "sequence length " + std::to_string(seq.length()));
    Matrix d_emb;
    lm::loss_and_backward(m.lm, seq, grads.lm, &d_emb);
    Matrix d_vis(seq.visual_count, d_emb.cols());
    for (std::size_t t = 0; t < seq.visual_count; ++t) std::copy(d_emb.row(t).begin(), d_emb.row(t).end(), d_vis.row(t).begin());
    vision::projector_backward(m.projector, cache, d_vis, grads.projector);

    auto params = m.projector.params();
    auto gparams = grads.projector.params();
    for (auto& p : m.lm.params()) params.push_back(p);
    for (auto& g : grads.lm.params()) gparams.push_back(g);
    double worst = 0.0;
    std::size_t checked = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const std::size_t n = params[i].values.size();
      // Every entry of small tensors; the embedding table is sampled.
      const std::size_t stride = n > 64 ? n / 64 : 1;
      for (std::size_t j = 0; j < n; j += stride) {
        double& v = params[i].values[j];
        const double keep = v;
        const double num = ridders_derivative(
            [&](double x) {
              v = x;
              const double l = loss_of();
              v = keep;
              return l;
            },
            keep);
        const double ana = gparams[i].values[j];
        const double rel = std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), 1e-6});
        worst = std::max(worst, rel);
        c.expect(rel < 1e-4, params[i].name + "[" + std::to_string(j) + "] rel err " + fmt(rel));
        ++checked;
      }
    }
    report(c, std::to_string(checked) + " entries, D=4/N=4/L=8, max rel err " + fmt(worst));
  });
}

void criterion_tokens() {
  Criterion c{6, "Visual token accounting"};
  guarded(c, [&] {
    std::size_t counts[2] = {};
    int k = 0;
    for (const auto kind : {vision::ProjectorKind::Mlp, vision::ProjectorKind::Ldp}) {
      PipelineConfig pc = PipelineConfig::standard();
      pc.projector = kind;
      const CobraModel m = CobraModel::init(pc);
      // A non-square source image goes through the full resize/patch path.
      auto img = vision::ImageInput::blank(500, 0.4);
      const auto tok = m.project(m.encode(img));
      counts[k++] = tok.h_v.rows();
      c.expect(tok.h_v.cols() == pc.backbone.model_dim, "projected width");
    }
    // 378 px / 14 px patches -> 27 x 27; stride-2 pooling -> ceil(27 / 2) = 14.
    c.expect(counts[0] == 27 * 27, "default pipeline yields " + std::to_string(counts[0]));
    c.expect(counts[1] == 14 * 14, "LDP pipeline yields " + std::to_string(counts[1]));
    const std::size_t alt = PipelineConfig::standard_384().visual_tokens();
    c.expect(alt == 576, "384 px / 16 px yields " + std::to_string(alt));
    report(c, "default " + std::to_string(counts[0]) + ", LDP " + std::to_string(counts[1]) + ", 384/16 " +
                  std::to_string(alt));
  });
}

void criterion_scaling() {
  Criterion c{7, "Decode latency scaling"};
  guarded(c, [&] {
    const auto t0 = Clock::now();
    lm::BackboneConfig cfg;
    cfg.model_dim = 64;
    Rng rng(707);
    const auto w = lm::BackboneWeights::init(cfg, rng);
    const auto ref = bench::AttentionReference::init(64, rng);
    bench::SweepOptions so;
    so.seed = 707;
    const auto s = bench::ssm_scaling_sweep(w, so);
    const auto a = bench::attention_scaling_sweep(ref, so);
    for (std::size_t i = 0; i < so.contexts.size(); ++i) {
      c.expect(s.points[i].state_bytes == s.points[0].state_bytes, "SSM state bytes vary with context");
      c.expect(a.points[i].cache_entries == so.contexts[i], "cache entries " + std::to_string(a.points[i].cache_entries) +
                                                                 " at context " + std::to_string(so.contexts[i]));
      c.expect(a.points[i].state_bytes == so.contexts[i] * a.points[0].state_bytes / so.contexts[0],
               "cache bytes not linear in context");
    }
    c.expect(s.ratio() < 1.2, "SSM latency ratio " + fmt(s.ratio()));
    c.expect(a.ratio() > 4.0, "attention latency ratio " + fmt(a.ratio()));
    const double secs = seconds_since(t0);
    c.expect(secs < 300.0, "took " + fmt(secs) + " s");
    report(c, "SSM ratio " + fmt(s.ratio()) + " (state " + std::to_string(s.points[0].state_bytes) +
                  " B constant), attention ratio " + fmt(a.ratio()) + ", " + fmt(secs) + " s");
  });
}

void criterion_throughput() {
  Criterion c{8, "Throughput report"};
  guarded(c, [&] {
    const CobraModel m = CobraModel::init(PipelineConfig::standard());
    const auto img = vision::ImageInput::blank(378, 0.5);
    bench::ThroughputOptions to;
    to.tag = "cobra-standard";
    to.n_out = 256;
    to.reps = 3;
    const auto r = bench::measure_throughput(m, &img, prompt::Conversation::single("Describe the image."),
                                             prompt::Template::Chat, to);
    c.expect(r.output_tokens == 256, "emitted " + std::to_string(r.output_tokens) + " tokens");
    c.expect(r.visual_tokens == 729, "visual tokens " + std::to_string(r.visual_tokens));
    c.expect(r.eval_avg == 256.0 / r.t_total_s, "Eval_avg is not n_out / T_total");
    const double resid = std::abs(r.eval_avg * r.t_total_s - 256.0);
    c.expect(resid <= 256.0 * std::numeric_limits<double>::epsilon(), "identity residual " + fmt(resid));
    const std::string table = bench::format_table({r});
    for (const char* col : {"Model", "Visual tokens", "Eval_avg (tok/s)", "Total (s)"}) {
      c.expect(table.find(col) != std::string::npos, std::string("table lacks column ") + col);
    }
    const auto fixed = bench::make_report("x", 729, 256, 1.54);
    c.expect(std::abs(fixed.eval_avg - 166.2337662337662) < 1e-12, "256 / 1.54 gave " + fmt(fixed.eval_avg));
    report(c, "n_out 256, T " + fmt(r.t_total_s) + " s, Eval_avg " + fmt(r.eval_avg) + " tok/s, residual " +
                  fmt(resid));
  });
}

std::vector<double> flat(std::vector<ssm::ParamRef> refs) {
  std::vector<double> out;
  for (const auto& r : refs) out.insert(out.end(), r.values.begin(), r.values.end());
  return out;
}

void criterion_training() {
  Criterion c{9, "Training recipe"};
  guarded(c, [&] {
    const auto t0 = Clock::now();
    // Two-epoch fine-tune on the synthetic task.
    train::TrainConfig cfg;
    cfg.lr = 1e-2;
    const auto data = train::make_synthetic_dataset(32, PipelineConfig::tiny().image_side, 909);
    CobraModel m = CobraModel::init(PipelineConfig::tiny());
    const auto r = train::train_toy(m, data, cfg);
    c.expect(r.curve.size() == 64, "steps " + std::to_string(r.curve.size()));
    c.expect(r.final_eval_loss <= 0.5 * r.initial_eval_loss,
             "loss " + fmt(r.initial_eval_loss) + " -> " + fmt(r.final_eval_loss));

    // Pre-align phase alone: backbone bit-identical, projector moved.
    CobraModel p = CobraModel::init(PipelineConfig::tiny());
    const auto lm_before = flat(p.lm.params());
    const auto proj_before = flat(p.projector.params());
    train::TrainOptions opts;
    opts.variant = train::Variant::PreAlignThenFt;
    opts.prealign_only = true;
    train::train_toy(p, data, cfg, opts);
    const auto lm_after = flat(p.lm.params());
    double max_delta = 0.0;
    for (std::size_t i = 0; i < lm_after.size(); ++i) max_delta = std::max(max_delta, std::abs(lm_after[i] - lm_before[i]));
    c.expect(lm_after == lm_before, "backbone moved by " + fmt(max_delta) + " during pre-align");
    c.expect(flat(p.projector.params()) != proj_before, "projector did not move during pre-align");

    // Schedule: peak at the end of warm-up, cosine afterwards.
    train::TrainConfig sc;
    sc.lr = 2e-5;
    const std::size_t total = 2000;
    const auto warm = static_cast<std::size_t>(std::ceil(0.03 * total));
    std::size_t argmax = 0;
    double cos_err = 0.0;
    for (std::size_t s = 0; s <= total; ++s) {
      const double v = train::lr_at(s, total, sc);
      if (v > train::lr_at(argmax, total, sc)) argmax = s;
      if (s >= warm) {
        const double ref = 0.5 * sc.lr * (1.0 + std::cos(std::numbers::pi * double(s - warm) / double(total - warm)));
        cos_err = std::max(cos_err, std::abs(v - ref));
      }
    }
    c.expect(argmax == warm, "peak at step " + std::to_string(argmax) + ", expected " + std::to_string(warm));
    c.expect(cos_err < 1e-18, "decay deviates from cosine by " + fmt(cos_err));
    const double secs = seconds_since(t0);
    c.expect(secs < 600.0, "took " + fmt(secs) + " s");
    report(c, "loss " + fmt(r.initial_eval_loss) + " -> " + fmt(r.final_eval_loss) + " in 2 epochs, pre-align backbone delta " +
                  fmt(max_delta) + ", peak at step " + std::to_string(argmax) + ", " + fmt(secs) + " s");
  });
}

std::string read_fixture(const std::string& name) {
  std::ifstream in(std::string(COBRA_FIXTURES) + "/" + name, std::ios::binary);
  if (!in) throw IoError("missing fixture " + name);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void criterion_prompts() {
  Criterion c{10, "Prompt templates"};
  guarded(c, [&] {
    using namespace prompt;
    const auto one = Conversation::single("What is the man holding?");
    const auto two = parse_conversation_jsonl(read_fixture("two_turn.jsonl"));
    auto sign = Conversation::single("What is written on the sign?");
    sign.ocr = "STOP";
    int matched = 0;
    auto golden = [&](const std::string& got, const std::string& file) {
      const bool same = got == read_fixture(file);
      c.expect(same, file + " differs");
      matched += same;
    };
    golden(render_chat(one), "chat_single.txt");
    golden(render_chat(two), "chat_two_turn.txt");
    golden(render_base(one), "base_single.txt");
    golden(render_base(two), "base_two_turn.txt");
    sign.ordering = OcrOrdering::OcrFirst;
    golden(render_chat(sign), "ocr_first.txt");
    sign.ordering = OcrOrdering::OcrLast;
    golden(render_chat(sign), "ocr_last.txt");
    c.expect(apply_ocr_ordering("What is written?", "STOP", OcrOrdering::OcrFirst) ==
                 "Reference OCR token: STOP\nWhat is written?",
             "ocr_first ordering");
    c.expect(apply_ocr_ordering("What is written?", "STOP", OcrOrdering::OcrLast) ==
                 "What is written?\nReference OCR token: STOP",
             "ocr_last ordering");
    report(c, std::to_string(matched) + "/6 goldens byte-exact, both OCR orderings exact");
  });
}

}  // namespace

int main() {
  criterion_lti();
  criterion_selective();
  criterion_zoh();
  criterion_streaming();
  criterion_gradient();
  criterion_tokens();
  criterion_scaling();
  criterion_throughput();
  criterion_training();
  criterion_prompts();
  std::printf("%d of 10 criteria failed\n", failures);
  return failures ? 1 : 0;
}
