#include <gtest/gtest.h>

#include <cmath>

#include "cobra/backbone.hpp"

using namespace cobra;
using namespace cobra::lm;

namespace {

BackboneWeights tiny_model(std::uint64_t seed, ssm::BRule rule = ssm::BRule::Euler) {
  BackboneConfig cfg;
  cfg.vocab = 300;
  cfg.model_dim = 8;
  cfg.layers = 2;
  cfg.state_dim = 4;
  cfg.b_rule = rule;
  Rng rng(seed);
  return BackboneWeights::init(cfg, rng);
}

std::vector<TokenId> ids(std::string_view s) { return prompt::tokenize(s); }

Matrix visual(std::size_t n, std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  return random_normal(n, dim, 1.0, rng);
}

}  // namespace

TEST(Fuse, VisualRowsThenText) {
  const auto w = tiny_model(1);
  const Matrix hv = visual(729, 8, 2);
  const auto text = ids("0123456789");
  const auto seq = fuse_sequence(hv, text, w, 3);
  ASSERT_EQ(seq.length(), 739u);
  EXPECT_EQ(seq.visual_count, 729u);
  EXPECT_EQ(seq.answer_count(), 3u);
  for (std::size_t i = 0; i < 729; ++i) EXPECT_EQ(seq.tokens[i], kNoToken);
  for (std::size_t k = 0; k < 8; ++k) {
    EXPECT_EQ(seq.embeddings(5, k), hv(5, k));
    EXPECT_EQ(seq.embeddings(729 + 4, k), w.embedding(text[4], k));
  }
  for (std::size_t t = 0; t < seq.length(); ++t) EXPECT_EQ(seq.loss_mask[t], t >= 736) << t;
}

TEST(Fuse, TextOnlyAndErrors) {
  const auto w = tiny_model(1);
  const auto seq = fuse_sequence(Matrix(0, 8), ids("hello"), w);
  EXPECT_EQ(seq.length(), 5u);
  EXPECT_EQ(seq.visual_count, 0u);
  EXPECT_EQ(seq.answer_count(), 0u);
  EXPECT_THROW(fuse_sequence(Matrix(2, 7), ids("x"), w), ShapeError);
  EXPECT_THROW(fuse_sequence(Matrix(0, 8), ids("x"), w, 2), Error);
  const std::vector<TokenId> out_of_vocab{1000};
  EXPECT_THROW(fuse_sequence(Matrix(0, 8), out_of_vocab, w), Error);
}

TEST(Forward, CausalAndFinite) {
  const auto w = tiny_model(3);
  auto seq = fuse_sequence(visual(6, 8, 4), ids("abcdefgh"), w);
  const Matrix base = forward_logits(w, seq);
  ASSERT_EQ(base.rows(), 14u);
  ASSERT_EQ(base.cols(), 300u);
  for (double v : base.flat()) ASSERT_TRUE(std::isfinite(v));
  const std::size_t t0 = 9;
  for (std::size_t k = 0; k < 8; ++k) seq.embeddings(t0, k) += 3.0;
  const Matrix moved = forward_logits(w, seq);
  for (std::size_t t = 0; t < 14; ++t) {
    double d = 0.0;
    for (std::size_t v = 0; v < 300; ++v) d = std::max(d, std::abs(moved(t, v) - base(t, v)));
    if (t < t0) EXPECT_EQ(d, 0.0) << t;
    else if (t == t0) EXPECT_GT(d, 0.0);
  }
}

TEST(Forward, SequentialMatchesParallel) {
  const auto w = tiny_model(5);
  const auto seq = fuse_sequence(visual(5, 8, 6), ids("streaming"), w);
  EXPECT_LE(max_abs_diff(forward_logits(w, seq, ssm::ScanMode::Parallel),
                         forward_logits(w, seq, ssm::ScanMode::Sequential)),
            1e-9);
}

class StepMatches : public ::testing::TestWithParam<ssm::BRule> {};

TEST_P(StepMatches, ForwardLogits) {
  const auto w = tiny_model(7, GetParam());
  const auto seq = fuse_sequence(visual(4, 8, 8), ids("one token at a time"), w);
  const Matrix full = forward_logits(w, seq);
  auto states = w.initial_states();
  for (std::size_t t = 0; t < seq.length(); ++t) {
    const Vector s = step_logits(w, states, seq.embeddings.row(t));
    ASSERT_LE(max_abs_diff(s, full.row(t)), 1e-6) << t;
  }
}

INSTANTIATE_TEST_SUITE_P(Rules, StepMatches, ::testing::Values(ssm::BRule::Euler, ssm::BRule::Zoh));

TEST(Loss, UniformLogitsGiveLogVocab) {
  const auto w = tiny_model(1);
  auto seq = fuse_sequence(Matrix(0, 8), ids("abcdef"), w, 4);
  EXPECT_NEAR(next_token_loss(Matrix(6, 256), seq), std::log(256.0), 1e-12);
}

TEST(Loss, ConfidentCorrectLogitsGiveZero) {
  const auto w = tiny_model(1);
  const auto text = ids("abcdef");
  auto seq = fuse_sequence(Matrix(0, 8), text, w, 3);
  Matrix logits(6, 300);
  for (std::size_t t = 1; t < 6; ++t) logits(t - 1, static_cast<std::size_t>(text[t])) = 1e3;
  EXPECT_NEAR(next_token_loss(logits, seq), 0.0, 1e-12);
  // Only masked positions count: ruin an unmasked prediction.
  logits(0, static_cast<std::size_t>(text[1])) = 0.0;
  EXPECT_NEAR(next_token_loss(logits, seq), 0.0, 1e-12);
  EXPECT_THROW(next_token_loss(logits, fuse_sequence(Matrix(0, 8), text, w, 0)), Error);
}

TEST(Loss, BackwardMatchesCentralDifferences) {
  auto w = tiny_model(11, ssm::BRule::Zoh);
  const auto seq = fuse_sequence(visual(3, 8, 12), ids("grad?"), w, 3);
  auto grads = BackboneWeights::zeros_like(w);
  Matrix d_emb;
  const double loss = loss_and_backward(w, seq, grads, &d_emb);
  EXPECT_NEAR(loss, next_token_loss(forward_logits(w, seq), seq), 1e-12);

  auto params = w.params();
  auto gp = grads.params();
  ASSERT_EQ(params.size(), gp.size());
  const double h = 1e-5;
  std::size_t checked = 0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const std::size_t n = params[k].values.size();
    for (std::size_t j = 0; j < n; j += std::max<std::size_t>(1, n / 5)) {
      double& x = params[k].values[j];
      const double x0 = x;
      x = x0 + h;
      const double up = next_token_loss(forward_logits(w, seq), seq);
      x = x0 - h;
      const double dn = next_token_loss(forward_logits(w, seq), seq);
      x = x0;
      const double num = (up - dn) / (2 * h);
      EXPECT_NEAR(gp[k].values[j], num, 1e-6 + 1e-4 * std::abs(num)) << params[k].name << "[" << j << "]";
      ++checked;
    }
  }
  EXPECT_GT(checked, 50u);

  // Gradient with respect to a visual row.
  auto moved = seq;
  for (std::size_t c = 0; c < 8; ++c) {
    moved.embeddings(1, c) = seq.embeddings(1, c) + h;
    const double up = next_token_loss(forward_logits(w, moved), moved);
    moved.embeddings(1, c) = seq.embeddings(1, c) - h;
    const double dn = next_token_loss(forward_logits(w, moved), moved);
    moved.embeddings(1, c) = seq.embeddings(1, c);
    const double num = (up - dn) / (2 * h);
    EXPECT_NEAR(d_emb(1, c), num, 1e-6 + 1e-4 * std::abs(num));
  }
}

TEST(Generate, GreedyDeterministicAndBounded) {
  const auto w = tiny_model(13);
  const auto seq = fuse_sequence(visual(4, 8, 14), ids("<|user|>\nhi<|endoftext|>\n<|assistant|>\n"), w);
  SamplingConfig sc;
  sc.max_new = 12;
  GenerationSession a(w, sc), b(w, sc);
  const auto ta = generate(a, seq, w);
  const auto tb = generate(b, seq, w);
  EXPECT_EQ(ta, tb);
  EXPECT_LE(ta.size(), 12u);
  EXPECT_EQ(a.trace().size(), ta.size());
  // First emitted token is the argmax of the last prompt logits.
  const Matrix full = forward_logits(w, seq);
  const auto last = full.row(full.rows() - 1);
  const auto argmax = static_cast<TokenId>(std::max_element(last.begin(), last.end()) - last.begin());
  ASSERT_FALSE(ta.empty());
  EXPECT_EQ(ta[0], argmax);
}

TEST(Generate, TemperatureSeeded) {
  const auto w = tiny_model(13);
  const auto seq = fuse_sequence(Matrix(0, 8), ids("seed"), w);
  SamplingConfig sc;
  sc.mode = SamplingConfig::Mode::Temperature;
  sc.temperature = 1.5;
  sc.ignore_stop = true;
  sc.max_new = 16;
  sc.seed = 42;
  GenerationSession a(w, sc), b(w, sc);
  EXPECT_EQ(generate(a, seq, w), generate(b, seq, w));
  EXPECT_EQ(a.emitted().size(), 16u);
}

TEST(Generate, PrefillThenStepMatchesForward) {
  const auto w = tiny_model(17);
  const auto text = ids("prefix and then steps");
  const auto seq = fuse_sequence(visual(3, 8, 18), text, w);
  const Matrix full = forward_logits(w, seq);
  GenerationSession s(w, SamplingConfig{});
  const std::size_t split = 3 + 6;
  Matrix head(split, 8);
  for (std::size_t t = 0; t < split; ++t) std::copy(seq.embeddings.row(t).begin(), seq.embeddings.row(t).end(), head.row(t).begin());
  Vector logits = s.prefill(w, head);
  EXPECT_LE(max_abs_diff(logits, full.row(split - 1)), 1e-6);
  for (std::size_t t = split; t < seq.length(); ++t) {
    logits = s.step(w, seq.tokens[t]);
    ASSERT_LE(max_abs_diff(logits, full.row(t)), 1e-6) << t;
  }
  EXPECT_EQ(s.position(), seq.length());
}

TEST(Generate, StateSizeIndependentOfLength) {
  const auto w = tiny_model(19);
  GenerationSession s(w, SamplingConfig{});
  const std::size_t before = s.serialized_state_bytes();
  for (int i = 0; i < 100; ++i) s.step(w, 'a');
  EXPECT_EQ(s.serialized_state_bytes(), before);
}

TEST(Detokenize, Examples) {
  const std::vector<TokenId> hi{72, 105, prompt::kEndOfText};
  EXPECT_EQ(detokenize(hi), "Hi<|endoftext|>");
  std::vector<TokenId> all(256);
  for (int i = 0; i < 256; ++i) all[i] = i;
  EXPECT_EQ(prompt::tokenize(detokenize(all)), all);
}

TEST(Weights, SaveLoadRoundTrip) {
  const auto w = tiny_model(23, ssm::BRule::Zoh);
  WeightContainer c;
  w.save(c, "lm");
  const auto back = BackboneWeights::load(WeightContainer::parse(c.serialize()), "lm");
  const auto seq = fuse_sequence(Matrix(0, 8), ids("round trip"), w);
  EXPECT_TRUE(forward_logits(w, seq) == forward_logits(back, seq));
  EXPECT_EQ(back.config.b_rule, ssm::BRule::Zoh);
}
