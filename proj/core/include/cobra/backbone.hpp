#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cobra/container.hpp"
#include "cobra/prompting.hpp"
#include "cobra/ssm.hpp"
#include "cobra/tensor.hpp"

namespace cobra::lm {

using prompt::TokenId;

struct BackboneConfig {
  std::size_t vocab = 300;
  std::size_t model_dim = 16;
  std::size_t layers = 2;
  std::size_t state_dim = 16;
  std::size_t expand = 2;
  std::size_t conv_width = 4;
  std::size_t dt_rank = 0;
  ssm::BRule b_rule = ssm::BRule::Euler;
  bool tie_embeddings = true;
  double norm_eps = 1e-5;

  void validate() const;
  ssm::MambaBlockConfig block_config() const;
  void save(WeightContainer& out, const std::string& prefix) const;
  static BackboneConfig load(const WeightContainer& in, const std::string& prefix);
};

struct BackboneWeights {
  BackboneConfig config;
  Matrix embedding;  // vocab x model_dim
  std::vector<ssm::MambaBlockWeights> blocks;
  Vector final_norm;   // model_dim
  Matrix unembedding;  // vocab x model_dim; empty when tied to `embedding`

  static BackboneWeights init(const BackboneConfig& cfg, Rng& rng);
  static BackboneWeights zeros_like(const BackboneWeights& w);

  const Matrix& output_matrix() const { return config.tie_embeddings ? embedding : unembedding; }
  std::vector<ssm::ParamRef> params();
  void save(WeightContainer& out, const std::string& prefix) const;
  static BackboneWeights load(const WeightContainer& in, const std::string& prefix);

  std::vector<ssm::SsmState> initial_states() const;
};

// H = [H_v; embed(text)]. Visual rows enter as continuous vectors and never
// touch the embedding table; their token slot holds kNoToken.
inline constexpr TokenId kNoToken = -1;

struct MultimodalSequence {
  Matrix embeddings;            // L_in x model_dim
  std::vector<TokenId> tokens;  // L_in
  // True on answer-token positions. Position t is predicted from logits[t-1].
  std::vector<bool> loss_mask;
  std::size_t visual_count = 0;

  std::size_t length() const { return embeddings.rows(); }
  std::size_t answer_count() const;
};

// The last `answer_len` text tokens are the supervised answer.
MultimodalSequence fuse_sequence(const Matrix& h_v, std::span<const TokenId> text_ids, const BackboneWeights& w,
                                 std::size_t answer_len = 0);

// Full-sequence logits (L_in x vocab). When `states` is non-null it supplies
// the per-layer initial state and receives the final one.
Matrix forward_logits(const BackboneWeights& w, const Matrix& embeddings,
                      ssm::ScanMode mode = ssm::ScanMode::Parallel, std::vector<ssm::SsmState>* states = nullptr);
Matrix forward_logits(const BackboneWeights& w, const MultimodalSequence& seq,
                      ssm::ScanMode mode = ssm::ScanMode::Parallel);

// Mean cross-entropy of logits[t-1] against tokens[t] over masked t.
double next_token_loss(const Matrix& logits, const MultimodalSequence& seq);

// Loss plus gradients. Parameter gradients accumulate into `grads`; the
// gradient with respect to the input embeddings (visual rows included) is
// written to `d_embeddings` when non-null.
double loss_and_backward(const BackboneWeights& w, const MultimodalSequence& seq, BackboneWeights& grads,
                         Matrix* d_embeddings = nullptr);

// Single-token decode step of the whole stack: embedding row in, logits out.
Vector step_logits(const BackboneWeights& w, std::vector<ssm::SsmState>& states, std::span<const double> x_t);

struct SamplingConfig {
  enum class Mode { Greedy, Temperature };
  Mode mode = Mode::Greedy;
  double temperature = 1.0;
  std::size_t max_new = 64;
  TokenId stop_token = prompt::kEndOfText;
  bool ignore_stop = false;  // keep decoding past the stop token (benchmarks)
  std::uint64_t seed = 0;
};

struct TraceEntry {
  std::size_t step = 0;
  TokenId token = 0;
  double latency_us = 0.0;
};

// Per-layer recurrent state of one decoding stream plus what it has emitted.
class GenerationSession {
 public:
  GenerationSession(const BackboneWeights& w, SamplingConfig sampling);

  const SamplingConfig& sampling() const { return sampling_; }
  const std::vector<TokenId>& emitted() const { return emitted_; }
  const std::vector<TraceEntry>& trace() const { return trace_; }
  std::size_t position() const { return position_; }
  bool fresh() const { return position_ == 0; }

  // Parallel pass over a prompt; returns the logits of its last position.
  Vector prefill(const BackboneWeights& w, const Matrix& embeddings);
  // Feeds one token; returns the logits for the next one.
  Vector step(const BackboneWeights& w, TokenId token);
  TokenId pick(std::span<const double> logits);

  // Size of the recurrent state alone; independent of tokens emitted.
  std::size_t serialized_state_bytes() const;
  const std::vector<ssm::SsmState>& states() const { return states_; }

 private:
  friend std::vector<TokenId> generate(GenerationSession&, const MultimodalSequence&, const BackboneWeights&);
  void check(const BackboneWeights& w) const;

  SamplingConfig sampling_;
  std::vector<ssm::SsmState> states_;
  std::vector<TokenId> emitted_;
  std::vector<TraceEntry> trace_;
  std::size_t position_ = 0;
  Rng rng_;
};

// Prefill on `seq`, then greedy/temperature decoding one recurrent step per
// token until the stop token or max_new.
std::vector<TokenId> generate(GenerationSession& session, const MultimodalSequence& seq, const BackboneWeights& w);

std::string detokenize(std::span<const TokenId> ids);

}  // namespace cobra::lm
