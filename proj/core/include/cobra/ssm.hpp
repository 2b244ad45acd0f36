#pragma once

// Structured and selective state-space layers.
//
// Conventions: sequences are (length x channels) matrices, one time step per
// row. Per-channel SSM parameters with a diagonal state matrix are stored as
// (channels x state_dim) matrices, so entry (c, n) is the n-th diagonal
// element of channel c's system.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cobra/container.hpp"
#include "cobra/tensor.hpp"

namespace cobra::ssm {

// ---------------------------------------------------------------------------
// Linear time-invariant SSM
// ---------------------------------------------------------------------------

// Continuous-time parameters, one independent diagonal system per channel.
struct LtiSsmParams {
  Vector delta;  // per channel, > 0
  Matrix a;      // channels x N, diagonal of A
  Matrix b;      // channels x N
  Matrix c;      // channels x N

  std::size_t channels() const { return delta.size(); }
  std::size_t state_dim() const { return a.cols(); }

  // Throws ShapeError / PreconditionError / InvalidParameterError.
  void validate() const;
  // True when every diagonal entry of A is strictly negative.
  bool is_stable() const;

  // Single channel, scalar state.
  static LtiSsmParams scalar(double delta, double a, double b, double c = 1.0);
};

struct DiscreteSsmParams {
  Matrix a_bar;  // channels x N, diagonal of exp(delta * A)
  Matrix b_bar;  // channels x N
  Matrix c;      // channels x N

  std::size_t channels() const { return a_bar.rows(); }
  std::size_t state_dim() const { return a_bar.cols(); }
  void validate() const;

  static DiscreteSsmParams scalar(double a_bar, double b_bar, double c);
};

// Zero-order hold. A diagonal entry of exactly zero takes the analytic limit
// b_bar = delta * b.
DiscreteSsmParams discretize_zoh(const LtiSsmParams& p);
// First-order (Euler) rule, a_bar = 1 + delta*a, b_bar = delta*b. Used as the
// reference the ZOH rule converges to as delta -> 0.
DiscreteSsmParams discretize_euler(const LtiSsmParams& p);

struct LtiScanResult {
  Matrix y;        // L x channels
  Matrix h_final;  // channels x N
};

// h_k = a_bar h_{k-1} + b_bar x_k, y_k = c . h_k. Empty h0 means zeros.
LtiScanResult lti_scan_recurrent(const DiscreteSsmParams& d, const Matrix& x,
                                 const Matrix& h0 = {});

// K[k] = c . a_bar^k . b_bar for k < length; stored as (length x channels).
struct SsmKernel {
  Matrix taps;
  std::size_t length() const { return taps.rows(); }
};

SsmKernel build_kernel(const DiscreteSsmParams& d, std::size_t length);

// y_k = sum_{j<=k} K[j] x_{k-j} (0-indexed), per channel.
Matrix convolve_kernel(const SsmKernel& kernel, const Matrix& x);

// Convolution form. Only defined for a zero initial state; passing a nonzero
// h0 throws UnsupportedModeError.
Matrix lti_forward_convolutional(const DiscreteSsmParams& d, const Matrix& x,
                                 const Matrix& h0 = {});

// ---------------------------------------------------------------------------
// Selective SSM
// ---------------------------------------------------------------------------

enum class BRule { Euler, Zoh };
enum class ScanMode { Sequential, Parallel };

ScanMode parse_scan_mode(std::string_view name);
std::string_view to_string(ScanMode mode);
BRule parse_b_rule(std::string_view name);
std::string_view to_string(BRule rule);

// Input-dependent projections. `channels` is the SSM input width (the
// expanded block width), N the state size, R the rank of the delta bottleneck.
struct SelectiveWeights {
  Matrix dt_down;  // R x channels
  Matrix dt_up;    // channels x R
  Vector dt_bias;  // channels
  Matrix w_b;      // N x channels
  Matrix w_c;      // N x channels
  Matrix a_log;    // channels x N; A = -exp(a_log) keeps every entry < 0
  BRule b_rule = BRule::Euler;

  std::size_t channels() const { return dt_bias.size(); }
  std::size_t state_dim() const { return a_log.cols(); }
  std::size_t dt_rank() const { return dt_down.rows(); }
  Matrix a() const;

  void validate() const;

  // A initialised to -(1..N) per channel; dt_bias chosen so that
  // softplus(dt_bias) is log-uniform in [1e-3, 1e-1].
  static SelectiveWeights init(std::size_t channels, std::size_t state_dim, std::size_t dt_rank,
                               Rng& rng, BRule rule = BRule::Euler);
  static SelectiveWeights zeros(std::size_t channels, std::size_t state_dim, std::size_t dt_rank,
                                BRule rule = BRule::Euler);
};

struct SelectiveStep {
  Vector delta;  // channels, strictly positive
  Vector b;      // N
  Vector c;      // N
};

SelectiveStep selective_parameterize(std::span<const double> x_t, const SelectiveWeights& w);

// Causal-convolution history: the last (width - 1) inputs per channel, stored
// as a ring buffer whose `head` row is the oldest entry.
struct ConvBuffer {
  Matrix rows;  // (width - 1) x channels
  std::size_t head = 0;

  static ConvBuffer zeros(std::size_t width, std::size_t channels);
  std::size_t width() const { return rows.rows() + 1; }
  // Oldest-first view of entry k in [0, width-1).
  std::span<const double> at(std::size_t k) const;
  void push(std::span<const double> x_t);
};

// Recurrent state of one SSM layer: fixed size for a given configuration.
struct SsmState {
  Matrix h;         // channels x N
  ConvBuffer conv;  // empty when the layer has no convolution

  static SsmState zeros(std::size_t channels, std::size_t state_dim, std::size_t conv_width = 1);

  void serialize_into(WeightContainer& out, const std::string& prefix) const;
  static SsmState deserialize(const WeightContainer& in, const std::string& prefix);
  std::size_t serialized_bytes() const;
};

struct ScanResult {
  Matrix y;        // L x channels
  Matrix h_final;  // channels x N
};

// Both modes apply the same per-step discretisation. Parallel mode evaluates
// the linear recurrence with a balanced-tree scan over (a, b) pairs; the tree
// shape depends only on L so results are deterministic.
ScanResult selective_scan(const Matrix& x, const SelectiveWeights& w, ScanMode mode,
                          const Matrix& h0 = {});
// Same computation carried out in single precision (inputs and outputs are
// converted at the boundary).
ScanResult selective_scan_f32(const Matrix& x, const SelectiveWeights& w, ScanMode mode,
                              const Matrix& h0 = {});

// One recurrence step on `state.h`; the conv buffer is untouched.
Vector ssm_step(SsmState& state, std::span<const double> x_t, const SelectiveWeights& w);

// ---------------------------------------------------------------------------
// Block pieces
// ---------------------------------------------------------------------------

// out_i = gain_i * x_i / sqrt(mean(x^2) + eps). eps may be 0.
Vector rms_norm(std::span<const double> x, std::span<const double> gain, double eps);

// Depthwise causal convolution. kernel is (channels x width), taps ordered
// oldest to newest, so kernel(c, width-1) multiplies the current input.
// When `state` is given it supplies the left context and receives the
// trailing history; otherwise the left context is zero.
Matrix causal_conv1d(const Matrix& x, const Matrix& kernel, std::span<const double> bias = {},
                     ConvBuffer* state = nullptr);
Vector conv_step(ConvBuffer& buffer, std::span<const double> x_t, const Matrix& kernel,
                 std::span<const double> bias = {});

// ---------------------------------------------------------------------------
// Mamba block
// ---------------------------------------------------------------------------

struct MambaBlockConfig {
  std::size_t model_dim = 16;
  std::size_t expand = 2;
  std::size_t state_dim = 16;
  std::size_t conv_width = 4;
  std::size_t dt_rank = 0;  // 0 -> ceil(model_dim / 16)
  BRule b_rule = BRule::Euler;
  double norm_eps = 1e-5;

  std::size_t inner_dim() const { return expand * model_dim; }
  std::size_t resolved_dt_rank() const { return dt_rank ? dt_rank : (model_dim + 15) / 16; }
  void validate() const;
};

// Named view of one trainable tensor. `decay` marks tensors that take
// decoupled weight decay.
struct ParamRef {
  std::string name;
  std::span<double> values;
  bool decay = false;
};

// out = x + out_proj( SiLU(z) * SSM(SiLU(conv(u))) ), [u; z] = in_proj(RMSNorm(x)).
struct MambaBlockWeights {
  MambaBlockConfig config;
  Vector norm_gain;    // model_dim
  Matrix in_proj;      // 2*inner x model_dim; rows [0, inner) feed the conv branch
  Matrix conv_kernel;  // inner x conv_width
  Vector conv_bias;    // inner
  SelectiveWeights ssm;
  Matrix out_proj;     // model_dim x inner

  static MambaBlockWeights init(const MambaBlockConfig& cfg, Rng& rng);
  // All tensors zero (norm gain one): the block reduces to its residual path.
  static MambaBlockWeights zeros(const MambaBlockConfig& cfg);

  std::vector<ParamRef> params();
  void save(WeightContainer& out, const std::string& prefix) const;
  static MambaBlockWeights load(const WeightContainer& in, const std::string& prefix,
                                const MambaBlockConfig& cfg);

  SsmState initial_state() const;
};

// Full-sequence forward. When `state` is non-null it is both the initial
// state and, on return, the state after the last token.
Matrix mamba_block_forward(const MambaBlockWeights& w, const Matrix& x,
                           ScanMode mode = ScanMode::Parallel, SsmState* state = nullptr);

// Single-token streaming form; matches mamba_block_forward token by token.
Vector mamba_block_step(const MambaBlockWeights& w, SsmState& state, std::span<const double> x_t);

// Activations kept for the backward pass (zero initial state).
struct MambaBlockCache {
  Matrix x, x_norm, inv_rms;  // inv_rms is L x 1
  Matrix u, z, v, s;
  Matrix dt_low, dt_pre, delta;
  Matrix b, c;
  std::vector<Matrix> h;  // L + 1 states, h[0] = zeros
  Matrix y;
};

Matrix mamba_block_forward_train(const MambaBlockWeights& w, const Matrix& x, MambaBlockCache& cache);

// Accumulates parameter gradients into `grads` (same shapes as `w`) and
// returns d loss / d x.
Matrix mamba_block_backward(const MambaBlockWeights& w, const MambaBlockCache& cache,
                            const Matrix& d_out, MambaBlockWeights& grads);

}  // namespace cobra::ssm
