#include "cobra/backbone.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace cobra::lm {

namespace {

std::size_t as_size(double v, const std::string& name) {
  if (!(v >= 0.0) || v != std::floor(v) || v > 1e12) throw FormatError("config entry '" + name + "' is not a count", 0);
  return static_cast<std::size_t>(v);
}

// Runs the block stack; returns the residual stream after the last block.
Matrix run_stack(const BackboneWeights& w, const Matrix& embeddings, ssm::ScanMode mode,
                 std::vector<ssm::SsmState>* states) {
  if (embeddings.rows() == 0) throw PreconditionError("forward: empty sequence");
  if (embeddings.cols() != w.config.model_dim) {
    throw ShapeError("forward: embedding width " + std::to_string(embeddings.cols()) + " != model dim " +
                     std::to_string(w.config.model_dim));
  }
  if (states && states->size() != w.blocks.size()) throw StateError("forward: one state per layer required");
  Matrix x = embeddings;
  for (std::size_t k = 0; k < w.blocks.size(); ++k) {
    x = ssm::mamba_block_forward(w.blocks[k], x, mode, states ? &(*states)[k] : nullptr);
  }
  return x;
}

void head_logits(const BackboneWeights& w, std::span<const double> x_t, std::span<double> logits) {
  const Vector n = ssm::rms_norm(x_t, w.final_norm, w.config.norm_eps);
  matvec(w.output_matrix(), n, logits);
}

double log_sum_exp(std::span<const double> v) {
  const double m = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

void check_mask(const MultimodalSequence& seq) {
  if (seq.loss_mask.size() != seq.length() || seq.tokens.size() != seq.length()) {
    throw ShapeError("sequence mask/tokens length mismatch");
  }
  if (seq.answer_count() == 0) throw PreconditionError("loss mask has no true position");
  if (seq.loss_mask[0]) throw PreconditionError("position 0 cannot be supervised (no preceding logits)");
}

}  // namespace

void BackboneConfig::validate() const {
  if (vocab == 0 || model_dim == 0 || layers == 0 || state_dim == 0 || expand == 0 || conv_width == 0) {
    throw ConfigError("BackboneConfig: all dimensions must be positive");
  }
  if (vocab < prompt::kMinVocab) {
    throw ConfigError("BackboneConfig: vocab must be >= " + std::to_string(prompt::kMinVocab) +
                      " (256 bytes + special tokens)");
  }
}

ssm::MambaBlockConfig BackboneConfig::block_config() const {
  return {model_dim, expand, state_dim, conv_width, dt_rank, b_rule, norm_eps};
}

void BackboneConfig::save(WeightContainer& out, const std::string& prefix) const {
  out.put_scalar(prefix + "vocab", static_cast<double>(vocab));
  out.put_scalar(prefix + "model_dim", static_cast<double>(model_dim));
  out.put_scalar(prefix + "layers", static_cast<double>(layers));
  out.put_scalar(prefix + "state_dim", static_cast<double>(state_dim));
  out.put_scalar(prefix + "expand", static_cast<double>(expand));
  out.put_scalar(prefix + "conv_width", static_cast<double>(conv_width));
  out.put_scalar(prefix + "dt_rank", static_cast<double>(block_config().resolved_dt_rank()));
  out.put_scalar(prefix + "b_rule_zoh", b_rule == ssm::BRule::Zoh ? 1.0 : 0.0);
  out.put_scalar(prefix + "tie_embeddings", tie_embeddings ? 1.0 : 0.0);
  out.put_scalar(prefix + "norm_eps", norm_eps);
}

BackboneConfig BackboneConfig::load(const WeightContainer& in, const std::string& prefix) {
  BackboneConfig c;
  c.vocab = as_size(in.scalar(prefix + "vocab"), prefix + "vocab");
  c.model_dim = as_size(in.scalar(prefix + "model_dim"), prefix + "model_dim");
  c.layers = as_size(in.scalar(prefix + "layers"), prefix + "layers");
  c.state_dim = as_size(in.scalar(prefix + "state_dim"), prefix + "state_dim");
  c.expand = as_size(in.scalar(prefix + "expand"), prefix + "expand");
  c.conv_width = as_size(in.scalar(prefix + "conv_width"), prefix + "conv_width");
  c.dt_rank = as_size(in.scalar(prefix + "dt_rank"), prefix + "dt_rank");
  c.b_rule = in.scalar(prefix + "b_rule_zoh") != 0.0 ? ssm::BRule::Zoh : ssm::BRule::Euler;
  c.tie_embeddings = in.scalar(prefix + "tie_embeddings") != 0.0;
  c.norm_eps = in.scalar(prefix + "norm_eps");
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint config invalid: ") + e.what(), 0);
  }
  return c;
}

BackboneWeights BackboneWeights::init(const BackboneConfig& cfg, Rng& rng) {
  cfg.validate();
  BackboneWeights w;
  w.config = cfg;
  w.embedding = random_normal(cfg.vocab, cfg.model_dim, 0.1, rng);
  const auto bc = cfg.block_config();
  for (std::size_t k = 0; k < cfg.layers; ++k) w.blocks.push_back(ssm::MambaBlockWeights::init(bc, rng));
  w.final_norm = Vector(cfg.model_dim, 1.0);
  if (!cfg.tie_embeddings) w.unembedding = random_normal(cfg.vocab, cfg.model_dim, 0.1, rng);
  return w;
}

BackboneWeights BackboneWeights::zeros_like(const BackboneWeights& w) {
  BackboneWeights z;
  z.config = w.config;
  z.embedding = Matrix(w.embedding.rows(), w.embedding.cols());
  for (const auto& b : w.blocks) {
    auto zb = ssm::MambaBlockWeights::zeros(b.config);
    zb.norm_gain.assign(zb.norm_gain.size(), 0.0);
    z.blocks.push_back(std::move(zb));
  }
  z.final_norm = Vector(w.final_norm.size(), 0.0);
  z.unembedding = Matrix(w.unembedding.rows(), w.unembedding.cols());
  return z;
}

std::vector<ssm::ParamRef> BackboneWeights::params() {
  std::vector<ssm::ParamRef> p{{"embedding", embedding.flat(), false}};
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    for (auto& r : blocks[k].params()) {
      r.name = "blocks." + std::to_string(k) + "." + r.name;
      p.push_back(std::move(r));
    }
  }
  p.push_back({"final_norm", final_norm, false});
  if (!config.tie_embeddings) p.push_back({"unembedding", unembedding.flat(), true});
  return p;
}

void BackboneWeights::save(WeightContainer& out, const std::string& prefix) const {
  config.save(out, prefix + "config.");
  out.put(prefix + "embedding", embedding);
  for (std::size_t k = 0; k < blocks.size(); ++k) blocks[k].save(out, prefix + "blocks." + std::to_string(k) + ".");
  out.put_vector(prefix + "final_norm", final_norm);
  if (!config.tie_embeddings) out.put(prefix + "unembedding", unembedding);
}

BackboneWeights BackboneWeights::load(const WeightContainer& in, const std::string& prefix) {
  BackboneWeights w;
  w.config = BackboneConfig::load(in, prefix + "config.");
  const auto& c = w.config;
  w.embedding = in.matrix(prefix + "embedding", c.vocab, c.model_dim);
  for (std::size_t k = 0; k < c.layers; ++k) {
    w.blocks.push_back(ssm::MambaBlockWeights::load(in, prefix + "blocks." + std::to_string(k) + ".", c.block_config()));
  }
  w.final_norm = in.vector(prefix + "final_norm", c.model_dim);
  if (!c.tie_embeddings) w.unembedding = in.matrix(prefix + "unembedding", c.vocab, c.model_dim);
  return w;
}

std::vector<ssm::SsmState> BackboneWeights::initial_states() const {
  std::vector<ssm::SsmState> s;
  for (const auto& b : blocks) s.push_back(b.initial_state());
  return s;
}

std::size_t MultimodalSequence::answer_count() const {
  return static_cast<std::size_t>(std::count(loss_mask.begin(), loss_mask.end(), true));
}

MultimodalSequence fuse_sequence(const Matrix& h_v, std::span<const TokenId> text_ids, const BackboneWeights& w,
                                 std::size_t answer_len) {
  if (text_ids.empty()) throw PreconditionError("fuse_sequence: text must contain at least one token");
  if (answer_len > text_ids.size()) throw PreconditionError("fuse_sequence: answer longer than text");
  const std::size_t D = w.config.model_dim;
  if (!h_v.empty() && h_v.cols() != D) {
    throw ShapeError("fuse_sequence: visual embeddings have width " + std::to_string(h_v.cols()) +
                     ", model dim is " + std::to_string(D));
  }
  const std::size_t nv = h_v.empty() ? 0 : h_v.rows();
  MultimodalSequence seq;
  seq.visual_count = nv;
  seq.embeddings = Matrix(nv + text_ids.size(), D);
  seq.tokens.assign(nv, kNoToken);
  seq.loss_mask.assign(nv + text_ids.size(), false);
  for (std::size_t i = 0; i < nv; ++i) std::copy(h_v.row(i).begin(), h_v.row(i).end(), seq.embeddings.row(i).begin());
  const std::size_t answer_start = text_ids.size() - answer_len;
  for (std::size_t j = 0; j < text_ids.size(); ++j) {
    const TokenId id = text_ids[j];
    if (id < 0 || static_cast<std::size_t>(id) >= w.config.vocab) {
      throw PreconditionError("fuse_sequence: token id " + std::to_string(id) + " outside vocabulary");
    }
    const auto src = w.embedding.row(static_cast<std::size_t>(id));
    std::copy(src.begin(), src.end(), seq.embeddings.row(nv + j).begin());
    seq.tokens.push_back(id);
    seq.loss_mask[nv + j] = j >= answer_start;
  }
  return seq;
}

Matrix forward_logits(const BackboneWeights& w, const Matrix& embeddings, ssm::ScanMode mode,
                      std::vector<ssm::SsmState>* states) {
  const Matrix x = run_stack(w, embeddings, mode, states);
  Matrix logits(x.rows(), w.config.vocab);
  for (std::size_t t = 0; t < x.rows(); ++t) head_logits(w, x.row(t), logits.row(t));
  return logits;
}

Matrix forward_logits(const BackboneWeights& w, const MultimodalSequence& seq, ssm::ScanMode mode) {
  return forward_logits(w, seq.embeddings, mode);
}

double next_token_loss(const Matrix& logits, const MultimodalSequence& seq) {
  check_mask(seq);
  require_shape(logits.rows() == seq.length(), "next_token_loss: logits rows != sequence length");
  double total = 0.0;
  for (std::size_t t = 1; t < seq.length(); ++t) {
    if (!seq.loss_mask[t]) continue;
    const TokenId target = seq.tokens[t];
    if (target < 0 || static_cast<std::size_t>(target) >= logits.cols()) {
      throw PreconditionError("next_token_loss: supervised position holds no valid token");
    }
    const auto row = logits.row(t - 1);
    total += log_sum_exp(row) - row[static_cast<std::size_t>(target)];
  }
  return total / static_cast<double>(seq.answer_count());
}

double loss_and_backward(const BackboneWeights& w, const MultimodalSequence& seq, BackboneWeights& grads,
                         Matrix* d_embeddings) {
  check_mask(seq);
  const std::size_t L = seq.length(), D = w.config.model_dim, V = w.config.vocab;
  std::vector<ssm::MambaBlockCache> caches(w.blocks.size());
  Matrix x = seq.embeddings;
  for (std::size_t k = 0; k < w.blocks.size(); ++k) x = ssm::mamba_block_forward_train(w.blocks[k], x, caches[k]);

  const double count = static_cast<double>(seq.answer_count());
  Matrix& d_out_mat = w.config.tie_embeddings ? grads.embedding : grads.unembedding;
  const Matrix& out_mat = w.output_matrix();
  Matrix dx(L, D);
  Vector n(D), logits(V), dn(D);
  double loss = 0.0;
  for (std::size_t t = 0; t + 1 < L; ++t) {
    if (!seq.loss_mask[t + 1]) continue;
    const TokenId target = seq.tokens[t + 1];
    if (target < 0 || static_cast<std::size_t>(target) >= V) {
      throw PreconditionError("loss: supervised position holds no valid token");
    }
    double ms = 0.0;
    for (double v : x.row(t)) ms += v * v;
    ms /= static_cast<double>(D);
    const double r = 1.0 / std::sqrt(ms + w.config.norm_eps);
    for (std::size_t i = 0; i < D; ++i) n[i] = w.final_norm[i] * x(t, i) * r;
    matvec(out_mat, n, logits);
    const double lse = log_sum_exp(logits);
    loss += lse - logits[static_cast<std::size_t>(target)];
    for (std::size_t v = 0; v < V; ++v) logits[v] = std::exp(logits[v] - lse) / count;  // d loss / d logits
    logits[static_cast<std::size_t>(target)] -= 1.0 / count;
    outer_acc(d_out_mat, logits, n);
    std::fill(dn.begin(), dn.end(), 0.0);
    matvec_t_acc(out_mat, logits, dn);
    double dot = 0.0;
    for (std::size_t i = 0; i < D; ++i) {
      grads.final_norm[i] += dn[i] * x(t, i) * r;
      dot += dn[i] * w.final_norm[i] * x(t, i);
    }
    for (std::size_t i = 0; i < D; ++i) {
      dx(t, i) = r * dn[i] * w.final_norm[i] - r * r * r * x(t, i) * dot / static_cast<double>(D);
    }
  }
  for (std::size_t k = w.blocks.size(); k-- > 0;) {
    dx = ssm::mamba_block_backward(w.blocks[k], caches[k], dx, grads.blocks[k]);
  }
  for (std::size_t t = 0; t < L; ++t) {
    if (seq.tokens[t] == kNoToken) continue;
    auto dst = grads.embedding.row(static_cast<std::size_t>(seq.tokens[t]));
    const auto src = dx.row(t);
    for (std::size_t i = 0; i < D; ++i) dst[i] += src[i];
  }
  if (d_embeddings) *d_embeddings = std::move(dx);
  return loss / count;
}

Vector step_logits(const BackboneWeights& w, std::vector<ssm::SsmState>& states, std::span<const double> x_t) {
  if (states.size() != w.blocks.size()) throw StateError("step: one state per layer required");
  Vector x(x_t.begin(), x_t.end());
  for (std::size_t k = 0; k < w.blocks.size(); ++k) x = ssm::mamba_block_step(w.blocks[k], states[k], x);
  Vector logits(w.config.vocab);
  head_logits(w, x, logits);
  return logits;
}

GenerationSession::GenerationSession(const BackboneWeights& w, SamplingConfig sampling)
    : sampling_(sampling), states_(w.initial_states()), rng_(sampling.seed) {
  if (sampling_.mode == SamplingConfig::Mode::Temperature && !(sampling_.temperature > 0.0)) {
    throw ConfigError("sampling temperature must be > 0");
  }
}

void GenerationSession::check(const BackboneWeights& w) const {
  if (states_.size() != w.blocks.size()) throw StateError("session was created for a different layer count");
  for (std::size_t k = 0; k < states_.size(); ++k) {
    const auto& cfg = w.blocks[k].config;
    const auto& s = states_[k];
    if (s.h.rows() != cfg.inner_dim() || s.h.cols() != cfg.state_dim || s.conv.width() != cfg.conv_width) {
      throw StateError("session state for layer " + std::to_string(k) + " does not match the model");
    }
  }
}

Vector GenerationSession::prefill(const BackboneWeights& w, const Matrix& embeddings) {
  check(w);
  const Matrix x = run_stack(w, embeddings, ssm::ScanMode::Parallel, &states_);
  position_ += embeddings.rows();
  Vector logits(w.config.vocab);
  head_logits(w, x.row(x.rows() - 1), logits);
  return logits;
}

Vector GenerationSession::step(const BackboneWeights& w, TokenId token) {
  check(w);
  if (token < 0 || static_cast<std::size_t>(token) >= w.config.vocab) {
    throw PreconditionError("step: token id " + std::to_string(token) + " outside vocabulary");
  }
  ++position_;
  return step_logits(w, states_, w.embedding.row(static_cast<std::size_t>(token)));
}

TokenId GenerationSession::pick(std::span<const double> logits) {
  if (logits.empty()) throw PreconditionError("pick: empty logits");
  if (sampling_.mode == SamplingConfig::Mode::Greedy) {
    return static_cast<TokenId>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  }
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::exp((logits[i] - m) / sampling_.temperature);
  std::discrete_distribution<std::size_t> dist(p.begin(), p.end());
  return static_cast<TokenId>(dist(rng_));
}

std::size_t GenerationSession::serialized_state_bytes() const {
  WeightContainer c;
  for (std::size_t k = 0; k < states_.size(); ++k) states_[k].serialize_into(c, "layer" + std::to_string(k) + ".");
  return c.serialize().size();
}

std::vector<TokenId> generate(GenerationSession& session, const MultimodalSequence& seq, const BackboneWeights& w) {
  using clock = std::chrono::steady_clock;
  std::vector<TokenId> out;
  if (session.sampling_.max_new == 0) return out;
  Vector logits = session.prefill(w, seq.embeddings);
  for (std::size_t i = 0; i < session.sampling_.max_new; ++i) {
    const auto start = clock::now();
    const TokenId tok = session.pick(logits);
    out.push_back(tok);
    session.emitted_.push_back(tok);
    const bool stop = tok == session.sampling_.stop_token && !session.sampling_.ignore_stop;
    if (!stop && i + 1 < session.sampling_.max_new) logits = session.step(w, tok);
    const std::chrono::duration<double, std::micro> dt = clock::now() - start;
    session.trace_.push_back({session.trace_.size(), tok, dt.count()});
    if (stop) break;
  }
  return out;
}

std::string detokenize(std::span<const TokenId> ids) { return prompt::detokenize(ids); }

}  // namespace cobra::lm
