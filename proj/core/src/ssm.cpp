#include "cobra/ssm.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>

namespace cobra::ssm {

namespace {

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

void check_sequence(const Matrix& x, std::size_t channels, const char* op) {
  if (x.rows() == 0) throw PreconditionError(std::string(op) + ": sequence length must be >= 1");
  if (x.cols() != channels) {
    throw ShapeError(std::string(op) + ": input has " + std::to_string(x.cols()) +
                     " channels, parameters have " + std::to_string(channels));
  }
}

Matrix resolve_h0(const Matrix& h0, std::size_t channels, std::size_t state_dim, const char* op) {
  if (h0.empty()) return Matrix(channels, state_dim);
  if (h0.rows() != channels || h0.cols() != state_dim) {
    throw ShapeError(std::string(op) + ": initial state shape does not match parameters");
  }
  if (!all_finite(h0.flat())) throw InvalidParameterError(std::string(op) + ": non-finite initial state");
  return h0;
}

// Per-step discretisation of one (channel, state) entry. Shared by every
// execution path so that all of them evaluate identical expressions.
template <typename T>
inline void discretize_entry(T delta, T a, T b, T x, BRule rule, T& a_bar, T& u) {
  const T da = delta * a;
  a_bar = std::exp(da);
  if (rule == BRule::Euler) {
    u = (delta * b) * x;
  } else {
    const T b_bar = (da == T(0)) ? delta * b : std::expm1(da) / a * b;
    u = b_bar * x;
  }
}

// Precomputed input-dependent parameters for a whole sequence.
template <typename T>
struct ScanInputs {
  std::size_t length = 0, channels = 0, state_dim = 0;
  std::vector<T> x, delta;  // L x channels
  std::vector<T> b, c;      // L x N
  std::vector<T> a;         // channels x N
  std::vector<T> h0;        // channels x N
};

template <typename T>
ScanInputs<T> prepare_scan(const Matrix& x, const SelectiveWeights& w, const Matrix& h0) {
  ScanInputs<T> in;
  in.length = x.rows();
  in.channels = w.channels();
  in.state_dim = w.state_dim();
  const std::size_t L = in.length, E = in.channels, N = in.state_dim;
  in.x.resize(L * E);
  in.delta.resize(L * E);
  in.b.resize(L * N);
  in.c.resize(L * N);
  for (std::size_t t = 0; t < L; ++t) {
    const auto p = selective_parameterize(x.row(t), w);
    for (std::size_t ch = 0; ch < E; ++ch) {
      in.x[t * E + ch] = static_cast<T>(x(t, ch));
      in.delta[t * E + ch] = static_cast<T>(p.delta[ch]);
    }
    for (std::size_t n = 0; n < N; ++n) {
      in.b[t * N + n] = static_cast<T>(p.b[n]);
      in.c[t * N + n] = static_cast<T>(p.c[n]);
    }
  }
  const Matrix a = w.a();
  in.a.assign(a.flat().begin(), a.flat().end());
  const Matrix h = resolve_h0(h0, E, N, "selective_scan");
  in.h0.assign(h.flat().begin(), h.flat().end());
  return in;
}

template <typename T>
void scan_sequential(const ScanInputs<T>& in, BRule rule, std::vector<T>& y, std::vector<T>& h) {
  const std::size_t L = in.length, E = in.channels, N = in.state_dim;
  h = in.h0;
  y.assign(L * E, T(0));
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t ch = 0; ch < E; ++ch) {
      const T d = in.delta[t * E + ch];
      const T xv = in.x[t * E + ch];
      T acc = T(0);
      for (std::size_t n = 0; n < N; ++n) {
        T a_bar, u;
        discretize_entry(d, in.a[ch * N + n], in.b[t * N + n], xv, rule, a_bar, u);
        T& hv = h[ch * N + n];
        hv = a_bar * hv + u;
        acc += in.c[t * N + n] * hv;
      }
      y[t * E + ch] = acc;
    }
  }
}

// Combine for h_t = a_t h_{t-1} + b_t: applying `early` then `late`.
template <typename T>
inline void combine(T a_early, T b_early, T& a_late, T& b_late) {
  b_late = a_late * b_early + b_late;
  a_late = a_late * a_early;
}

// Work-efficient balanced-tree (up-sweep / down-sweep) exclusive scan over the
// padded power-of-two length, then one combine per element for the inclusive
// prefix. Each (channel, state) lane is scanned independently.
template <typename T>
void scan_parallel(const ScanInputs<T>& in, BRule rule, std::vector<T>& y, std::vector<T>& h) {
  const std::size_t L = in.length, E = in.channels, N = in.state_dim;
  const std::size_t P = std::bit_ceil(L);
  std::vector<T> ta(P), tb(P), ea(L), eb(L);
  y.assign(L * E, T(0));
  h.assign(E * N, T(0));
  for (std::size_t ch = 0; ch < E; ++ch) {
    for (std::size_t n = 0; n < N; ++n) {
      const T a = in.a[ch * N + n];
      for (std::size_t t = 0; t < L; ++t) {
        discretize_entry(in.delta[t * E + ch], a, in.b[t * N + n], in.x[t * E + ch], rule, ea[t], eb[t]);
        ta[t] = ea[t];
        tb[t] = eb[t];
      }
      for (std::size_t t = L; t < P; ++t) {
        ta[t] = T(1);
        tb[t] = T(0);
      }
      // Up-sweep: node i accumulates the segment ending at i.
      for (std::size_t stride = 1; stride < P; stride *= 2) {
        for (std::size_t i = 2 * stride - 1; i < P; i += 2 * stride) {
          combine(ta[i - stride], tb[i - stride], ta[i], tb[i]);
        }
      }
      ta[P - 1] = T(1);
      tb[P - 1] = T(0);
      // Down-sweep: left child receives the parent's prefix, right child the
      // parent's prefix followed by the left subtree.
      for (std::size_t stride = P / 2; stride >= 1; stride /= 2) {
        for (std::size_t i = 2 * stride - 1; i < P; i += 2 * stride) {
          const T left_a = ta[i - stride], left_b = tb[i - stride];
          ta[i - stride] = ta[i];
          tb[i - stride] = tb[i];
          T na = left_a, nb = left_b;
          combine(ta[i], tb[i], na, nb);
          ta[i] = na;
          tb[i] = nb;
        }
        if (stride == 1) break;
      }
      const T h0 = in.h0[ch * N + n];
      T last = h0;
      for (std::size_t t = 0; t < L; ++t) {
        T pa = ea[t], pb = eb[t];
        combine(ta[t], tb[t], pa, pb);
        const T hv = pa * h0 + pb;
        y[t * E + ch] += in.c[t * N + n] * hv;
        last = hv;
      }
      h[ch * N + n] = last;
    }
  }
}

template <typename T>
ScanResult run_scan(const Matrix& x, const SelectiveWeights& w, ScanMode mode, const Matrix& h0) {
  w.validate();
  check_sequence(x, w.channels(), "selective_scan");
  const auto in = prepare_scan<T>(x, w, h0);
  std::vector<T> y, h;
  switch (mode) {
    case ScanMode::Sequential:
      scan_sequential(in, w.b_rule, y, h);
      break;
    case ScanMode::Parallel:
      scan_parallel(in, w.b_rule, y, h);
      break;
    default:
      throw ConfigError("selective_scan: unknown scan mode");
  }
  ScanResult r{Matrix(in.length, in.channels), Matrix(in.channels, in.state_dim)};
  std::copy(y.begin(), y.end(), r.y.flat().begin());
  std::copy(h.begin(), h.end(), r.h_final.flat().begin());
  return r;
}

}  // namespace

// ---------------------------------------------------------------------------
// LTI
// ---------------------------------------------------------------------------

void LtiSsmParams::validate() const {
  const std::size_t D = channels();
  if (D == 0) throw ShapeError("LtiSsmParams: at least one channel required");
  if (state_dim() == 0) throw ShapeError("LtiSsmParams: state_dim must be >= 1");
  if (a.rows() != D || b.rows() != D || c.rows() != D || b.cols() != state_dim() ||
      c.cols() != state_dim()) {
    throw ShapeError("LtiSsmParams: A, B, C must all be channels x state_dim");
  }
  if (!all_finite(delta) || !all_finite(a.flat()) || !all_finite(b.flat()) || !all_finite(c.flat())) {
    throw InvalidParameterError("LtiSsmParams: NaN or Inf in parameters");
  }
  for (double d : delta) {
    if (d <= 0.0) throw PreconditionError("LtiSsmParams: delta must be > 0");
  }
}

bool LtiSsmParams::is_stable() const {
  return std::all_of(a.flat().begin(), a.flat().end(), [](double v) { return v < 0.0; });
}

LtiSsmParams LtiSsmParams::scalar(double delta, double a, double b, double c) {
  return {Vector{delta}, Matrix(1, 1, a), Matrix(1, 1, b), Matrix(1, 1, c)};
}

void DiscreteSsmParams::validate() const {
  if (a_bar.rows() == 0 || a_bar.cols() == 0) throw ShapeError("DiscreteSsmParams: empty");
  if (!a_bar.same_shape(b_bar) || !a_bar.same_shape(c)) {
    throw ShapeError("DiscreteSsmParams: a_bar, b_bar, c must share a shape");
  }
  if (!all_finite(a_bar.flat()) || !all_finite(b_bar.flat()) || !all_finite(c.flat())) {
    throw InvalidParameterError("DiscreteSsmParams: NaN or Inf in parameters");
  }
}

DiscreteSsmParams DiscreteSsmParams::scalar(double a_bar, double b_bar, double c) {
  return {Matrix(1, 1, a_bar), Matrix(1, 1, b_bar), Matrix(1, 1, c)};
}

DiscreteSsmParams discretize_zoh(const LtiSsmParams& p) {
  p.validate();
  DiscreteSsmParams d{Matrix(p.channels(), p.state_dim()), Matrix(p.channels(), p.state_dim()), p.c};
  for (std::size_t ch = 0; ch < p.channels(); ++ch) {
    const double dt = p.delta[ch];
    for (std::size_t n = 0; n < p.state_dim(); ++n) {
      const double da = dt * p.a(ch, n);
      d.a_bar(ch, n) = std::exp(da);
      // (dA)^{-1} (exp(dA) - 1) dB, with the removable singularity at dA = 0.
      d.b_bar(ch, n) = (da == 0.0) ? dt * p.b(ch, n) : std::expm1(da) / da * dt * p.b(ch, n);
    }
  }
  return d;
}

DiscreteSsmParams discretize_euler(const LtiSsmParams& p) {
  p.validate();
  DiscreteSsmParams d{Matrix(p.channels(), p.state_dim()), Matrix(p.channels(), p.state_dim()), p.c};
  for (std::size_t ch = 0; ch < p.channels(); ++ch) {
    for (std::size_t n = 0; n < p.state_dim(); ++n) {
      d.a_bar(ch, n) = 1.0 + p.delta[ch] * p.a(ch, n);
      d.b_bar(ch, n) = p.delta[ch] * p.b(ch, n);
    }
  }
  return d;
}

LtiScanResult lti_scan_recurrent(const DiscreteSsmParams& d, const Matrix& x, const Matrix& h0) {
  d.validate();
  check_sequence(x, d.channels(), "lti_scan_recurrent");
  const std::size_t L = x.rows(), D = d.channels(), N = d.state_dim();
  LtiScanResult r{Matrix(L, D), resolve_h0(h0, D, N, "lti_scan_recurrent")};
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t ch = 0; ch < D; ++ch) {
      double acc = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        double& h = r.h_final(ch, n);
        h = d.a_bar(ch, n) * h + d.b_bar(ch, n) * x(t, ch);
        acc += d.c(ch, n) * h;
      }
      r.y(t, ch) = acc;
    }
  }
  return r;
}

SsmKernel build_kernel(const DiscreteSsmParams& d, std::size_t length) {
  d.validate();
  if (length == 0) throw PreconditionError("build_kernel: empty kernel (length 0)");
  const std::size_t D = d.channels(), N = d.state_dim();
  SsmKernel k{Matrix(length, D)};
  for (std::size_t ch = 0; ch < D; ++ch) {
    for (std::size_t n = 0; n < N; ++n) {
      double power = 1.0;
      for (std::size_t j = 0; j < length; ++j) {
        k.taps(j, ch) += d.c(ch, n) * power * d.b_bar(ch, n);
        power *= d.a_bar(ch, n);
      }
    }
  }
  return k;
}

Matrix convolve_kernel(const SsmKernel& kernel, const Matrix& x) {
  if (x.rows() == 0) throw PreconditionError("convolve_kernel: sequence length must be >= 1");
  require_shape(kernel.taps.cols() == x.cols(), "convolve_kernel: channel mismatch");
  require_shape(kernel.length() >= x.rows(), "convolve_kernel: kernel shorter than input");
  Matrix y(x.rows(), x.cols());
  for (std::size_t t = 0; t < x.rows(); ++t) {
    for (std::size_t ch = 0; ch < x.cols(); ++ch) {
      double acc = 0.0;
      for (std::size_t j = 0; j <= t; ++j) acc += kernel.taps(j, ch) * x(t - j, ch);
      y(t, ch) = acc;
    }
  }
  return y;
}

Matrix lti_forward_convolutional(const DiscreteSsmParams& d, const Matrix& x, const Matrix& h0) {
  if (!h0.empty()) {
    require_shape(h0.rows() == d.channels() && h0.cols() == d.state_dim(),
                  "lti_forward_convolutional: initial state shape mismatch");
    if (std::any_of(h0.flat().begin(), h0.flat().end(), [](double v) { return v != 0.0; })) {
      throw UnsupportedModeError("convolution form requires a zero initial state");
    }
  }
  check_sequence(x, d.channels(), "lti_forward_convolutional");
  return convolve_kernel(build_kernel(d, x.rows()), x);
}

// ---------------------------------------------------------------------------
// Selective
// ---------------------------------------------------------------------------

ScanMode parse_scan_mode(std::string_view name) {
  if (name == "sequential") return ScanMode::Sequential;
  if (name == "parallel") return ScanMode::Parallel;
  throw ConfigError("unknown scan mode '" + std::string(name) + "' (expected sequential|parallel)");
}

std::string_view to_string(ScanMode mode) {
  return mode == ScanMode::Sequential ? "sequential" : "parallel";
}

BRule parse_b_rule(std::string_view name) {
  if (name == "euler") return BRule::Euler;
  if (name == "zoh") return BRule::Zoh;
  throw ConfigError("unknown B discretisation '" + std::string(name) + "' (expected euler|zoh)");
}

std::string_view to_string(BRule rule) { return rule == BRule::Euler ? "euler" : "zoh"; }

Matrix SelectiveWeights::a() const {
  Matrix out(a_log.rows(), a_log.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out.flat()[i] = -std::exp(a_log.flat()[i]);
  return out;
}

void SelectiveWeights::validate() const {
  const std::size_t E = channels(), N = state_dim(), R = dt_rank();
  if (E == 0 || N == 0 || R == 0) throw ShapeError("SelectiveWeights: empty dimension");
  if (dt_down.cols() != E || dt_up.rows() != E || dt_up.cols() != R || w_b.rows() != N ||
      w_b.cols() != E || w_c.rows() != N || w_c.cols() != E || a_log.rows() != E) {
    throw ShapeError("SelectiveWeights: inconsistent projection shapes");
  }
}

SelectiveWeights SelectiveWeights::init(std::size_t channels, std::size_t state_dim,
                                        std::size_t dt_rank, Rng& rng, BRule rule) {
  SelectiveWeights w = zeros(channels, state_dim, dt_rank, rule);
  const double in_scale = 1.0 / std::sqrt(static_cast<double>(channels));
  w.dt_down = random_uniform(dt_rank, channels, -in_scale, in_scale, rng);
  const double up_scale = 1.0 / std::sqrt(static_cast<double>(dt_rank));
  w.dt_up = random_uniform(channels, dt_rank, -up_scale, up_scale, rng);
  std::uniform_real_distribution<double> log_dt(std::log(1e-3), std::log(1e-1));
  for (auto& b : w.dt_bias) {
    const double dt = std::exp(log_dt(rng));
    b = dt + std::log(-std::expm1(-dt));  // inverse softplus
  }
  w.w_b = random_uniform(state_dim, channels, -in_scale, in_scale, rng);
  w.w_c = random_uniform(state_dim, channels, -in_scale, in_scale, rng);
  for (std::size_t ch = 0; ch < channels; ++ch) {
    for (std::size_t n = 0; n < state_dim; ++n) w.a_log(ch, n) = std::log(static_cast<double>(n + 1));
  }
  return w;
}

SelectiveWeights SelectiveWeights::zeros(std::size_t channels, std::size_t state_dim,
                                         std::size_t dt_rank, BRule rule) {
  SelectiveWeights w;
  w.dt_down = Matrix(dt_rank, channels);
  w.dt_up = Matrix(channels, dt_rank);
  w.dt_bias = Vector(channels, 0.0);
  w.w_b = Matrix(state_dim, channels);
  w.w_c = Matrix(state_dim, channels);
  w.a_log = Matrix(channels, state_dim);
  w.b_rule = rule;
  return w;
}

SelectiveStep selective_parameterize(std::span<const double> x_t, const SelectiveWeights& w) {
  if (x_t.size() != w.channels()) {
    throw ShapeError("selective_parameterize: input has " + std::to_string(x_t.size()) +
                     " channels, weights expect " + std::to_string(w.channels()));
  }
  if (!all_finite(x_t)) throw InvalidParameterError("selective_parameterize: NaN or Inf input");
  SelectiveStep p{Vector(w.channels()), Vector(w.state_dim()), Vector(w.state_dim())};
  Vector low(w.dt_rank());
  matvec(w.dt_down, x_t, low);
  matvec(w.dt_up, low, p.delta);
  for (std::size_t ch = 0; ch < p.delta.size(); ++ch) {
    // softplus underflows to 0 below about -745; keep delta strictly positive.
    p.delta[ch] = std::max(softplus(p.delta[ch] + w.dt_bias[ch]), std::numeric_limits<double>::min());
  }
  matvec(w.w_b, x_t, p.b);
  matvec(w.w_c, x_t, p.c);
  return p;
}

ConvBuffer ConvBuffer::zeros(std::size_t width, std::size_t channels) {
  if (width == 0) throw ShapeError("ConvBuffer: width must be >= 1");
  return ConvBuffer{Matrix(width - 1, channels), 0};
}

std::span<const double> ConvBuffer::at(std::size_t k) const {
  return rows.row((head + k) % rows.rows());
}

void ConvBuffer::push(std::span<const double> x_t) {
  if (rows.rows() == 0) return;
  require_shape(x_t.size() == rows.cols(), "ConvBuffer::push: channel mismatch");
  std::copy(x_t.begin(), x_t.end(), rows.row(head).begin());
  head = (head + 1) % rows.rows();
}

SsmState SsmState::zeros(std::size_t channels, std::size_t state_dim, std::size_t conv_width) {
  return SsmState{Matrix(channels, state_dim), ConvBuffer::zeros(conv_width, channels)};
}

void SsmState::serialize_into(WeightContainer& out, const std::string& prefix) const {
  out.put(prefix + "h", h);
  out.put(prefix + "conv", conv.rows);
  out.put_scalar(prefix + "conv_head", static_cast<double>(conv.head));
}

SsmState SsmState::deserialize(const WeightContainer& in, const std::string& prefix) {
  SsmState s;
  s.h = in.matrix(prefix + "h");
  s.conv.rows = in.matrix(prefix + "conv");
  const double head = in.scalar(prefix + "conv_head");
  const auto limit = static_cast<double>(std::max<std::size_t>(s.conv.rows.rows(), 1));
  if (!(head >= 0.0 && head < limit) || head != std::floor(head)) {
    throw FormatError("state entry '" + prefix + "conv_head' out of range", 0);
  }
  s.conv.head = static_cast<std::size_t>(head);
  return s;
}

std::size_t SsmState::serialized_bytes() const {
  WeightContainer c;
  serialize_into(c, "");
  return c.serialize().size();
}

ScanResult selective_scan(const Matrix& x, const SelectiveWeights& w, ScanMode mode, const Matrix& h0) {
  return run_scan<double>(x, w, mode, h0);
}

ScanResult selective_scan_f32(const Matrix& x, const SelectiveWeights& w, ScanMode mode, const Matrix& h0) {
  return run_scan<float>(x, w, mode, h0);
}

Vector ssm_step(SsmState& state, std::span<const double> x_t, const SelectiveWeights& w) {
  const std::size_t E = w.channels(), N = w.state_dim();
  if (state.h.rows() != E || state.h.cols() != N) {
    throw StateError("ssm_step: state is " + std::to_string(state.h.rows()) + "x" +
                     std::to_string(state.h.cols()) + ", weights expect " + std::to_string(E) +
                     "x" + std::to_string(N));
  }
  const auto p = selective_parameterize(x_t, w);
  const Matrix a = w.a();
  Vector y(E);
  for (std::size_t ch = 0; ch < E; ++ch) {
    double acc = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      double a_bar, u;
      discretize_entry(p.delta[ch], a(ch, n), p.b[n], x_t[ch], w.b_rule, a_bar, u);
      double& hv = state.h(ch, n);
      hv = a_bar * hv + u;
      acc += p.c[n] * hv;
    }
    y[ch] = acc;
  }
  return y;
}

// ---------------------------------------------------------------------------
// Block pieces
// ---------------------------------------------------------------------------

Vector rms_norm(std::span<const double> x, std::span<const double> gain, double eps) {
  require_shape(x.size() == gain.size() && !x.empty(), "rms_norm: x and gain must have equal, nonzero length");
  if (!(eps >= 0.0)) throw InvalidParameterError("rms_norm: eps must be >= 0");
  double ms = 0.0;
  for (double v : x) ms += v * v;
  ms /= static_cast<double>(x.size());
  Vector out(x.size(), 0.0);
  if (ms + eps == 0.0) return out;
  const double r = 1.0 / std::sqrt(ms + eps);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = gain[i] * (x[i] * r);
  return out;
}

Matrix causal_conv1d(const Matrix& x, const Matrix& kernel, std::span<const double> bias, ConvBuffer* state) {
  const std::size_t L = x.rows(), E = x.cols(), W = kernel.cols();
  require_shape(kernel.rows() == E && W >= 1, "causal_conv1d: kernel must be channels x width (width >= 1)");
  require_shape(bias.empty() || bias.size() == E, "causal_conv1d: bias length mismatch");
  if (state) {
    require_shape(state->width() == W && state->rows.cols() == E, "causal_conv1d: state shape mismatch");
  }
  Matrix y(L, E);
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t ch = 0; ch < E; ++ch) {
      double acc = bias.empty() ? 0.0 : bias[ch];
      for (std::size_t k = 0; k < W; ++k) {
        // Tap k looks at time t - (W - 1) + k.
        const auto back = static_cast<std::ptrdiff_t>(t + k) - static_cast<std::ptrdiff_t>(W - 1);
        double v = 0.0;
        if (back >= 0) {
          v = x(static_cast<std::size_t>(back), ch);
        } else if (state) {
          v = state->at(static_cast<std::size_t>(static_cast<std::ptrdiff_t>(W - 1) + back))[ch];
        }
        acc += kernel(ch, k) * v;
      }
      y(t, ch) = acc;
    }
  }
  if (state) {
    for (std::size_t t = L > W - 1 ? L - (W - 1) : 0; t < L; ++t) state->push(x.row(t));
  }
  return y;
}

Vector conv_step(ConvBuffer& buffer, std::span<const double> x_t, const Matrix& kernel,
                 std::span<const double> bias) {
  const std::size_t E = x_t.size(), W = kernel.cols();
  require_shape(kernel.rows() == E && W == buffer.width() && buffer.rows.cols() == E,
                "conv_step: buffer/kernel shape mismatch");
  require_shape(bias.empty() || bias.size() == E, "conv_step: bias length mismatch");
  Vector y(E);
  for (std::size_t ch = 0; ch < E; ++ch) {
    double acc = bias.empty() ? 0.0 : bias[ch];
    for (std::size_t k = 0; k + 1 < W; ++k) acc += kernel(ch, k) * buffer.at(k)[ch];
    acc += kernel(ch, W - 1) * x_t[ch];
    y[ch] = acc;
  }
  buffer.push(x_t);
  return y;
}

// ---------------------------------------------------------------------------
// Mamba block
// ---------------------------------------------------------------------------

void MambaBlockConfig::validate() const {
  if (model_dim == 0 || expand == 0 || state_dim == 0 || conv_width == 0) {
    throw ConfigError("MambaBlockConfig: all dimensions must be positive");
  }
  if (!(norm_eps >= 0.0)) throw ConfigError("MambaBlockConfig: norm_eps must be >= 0");
}

MambaBlockWeights MambaBlockWeights::zeros(const MambaBlockConfig& cfg) {
  cfg.validate();
  const std::size_t D = cfg.model_dim, E = cfg.inner_dim();
  MambaBlockWeights w;
  w.config = cfg;
  w.norm_gain = Vector(D, 1.0);
  w.in_proj = Matrix(2 * E, D);
  w.conv_kernel = Matrix(E, cfg.conv_width);
  w.conv_bias = Vector(E, 0.0);
  w.ssm = SelectiveWeights::zeros(E, cfg.state_dim, cfg.resolved_dt_rank(), cfg.b_rule);
  w.out_proj = Matrix(D, E);
  return w;
}

MambaBlockWeights MambaBlockWeights::init(const MambaBlockConfig& cfg, Rng& rng) {
  MambaBlockWeights w = zeros(cfg);
  const std::size_t D = cfg.model_dim, E = cfg.inner_dim();
  const double in_scale = 1.0 / std::sqrt(static_cast<double>(D));
  w.in_proj = random_uniform(2 * E, D, -in_scale, in_scale, rng);
  const double conv_scale = 1.0 / std::sqrt(static_cast<double>(cfg.conv_width));
  w.conv_kernel = random_uniform(E, cfg.conv_width, -conv_scale, conv_scale, rng);
  for (auto& b : w.conv_bias) b = std::uniform_real_distribution<double>(-conv_scale, conv_scale)(rng);
  w.ssm = SelectiveWeights::init(E, cfg.state_dim, cfg.resolved_dt_rank(), rng, cfg.b_rule);
  const double out_scale = 1.0 / std::sqrt(static_cast<double>(E));
  w.out_proj = random_uniform(D, E, -out_scale, out_scale, rng);
  return w;
}

std::vector<ParamRef> MambaBlockWeights::params() {
  return {
      {"norm_gain", norm_gain, false},
      {"in_proj", in_proj.flat(), true},
      {"conv_kernel", conv_kernel.flat(), true},
      {"conv_bias", conv_bias, false},
      {"dt_down", ssm.dt_down.flat(), true},
      {"dt_up", ssm.dt_up.flat(), true},
      {"dt_bias", ssm.dt_bias, false},
      {"w_b", ssm.w_b.flat(), true},
      {"w_c", ssm.w_c.flat(), true},
      {"a_log", ssm.a_log.flat(), false},
      {"out_proj", out_proj.flat(), true},
  };
}

void MambaBlockWeights::save(WeightContainer& out, const std::string& prefix) const {
  out.put_vector(prefix + "norm_gain", norm_gain);
  out.put(prefix + "in_proj", in_proj);
  out.put(prefix + "conv_kernel", conv_kernel);
  out.put_vector(prefix + "conv_bias", conv_bias);
  out.put(prefix + "dt_down", ssm.dt_down);
  out.put(prefix + "dt_up", ssm.dt_up);
  out.put_vector(prefix + "dt_bias", ssm.dt_bias);
  out.put(prefix + "w_b", ssm.w_b);
  out.put(prefix + "w_c", ssm.w_c);
  out.put(prefix + "a_log", ssm.a_log);
  out.put(prefix + "out_proj", out_proj);
}

MambaBlockWeights MambaBlockWeights::load(const WeightContainer& in, const std::string& prefix,
                                          const MambaBlockConfig& cfg) {
  cfg.validate();
  const std::size_t D = cfg.model_dim, E = cfg.inner_dim(), N = cfg.state_dim;
  const std::size_t R = cfg.resolved_dt_rank();
  MambaBlockWeights w;
  w.config = cfg;
  w.norm_gain = in.vector(prefix + "norm_gain", D);
  w.in_proj = in.matrix(prefix + "in_proj", 2 * E, D);
  w.conv_kernel = in.matrix(prefix + "conv_kernel", E, cfg.conv_width);
  w.conv_bias = in.vector(prefix + "conv_bias", E);
  w.ssm.dt_down = in.matrix(prefix + "dt_down", R, E);
  w.ssm.dt_up = in.matrix(prefix + "dt_up", E, R);
  w.ssm.dt_bias = in.vector(prefix + "dt_bias", E);
  w.ssm.w_b = in.matrix(prefix + "w_b", N, E);
  w.ssm.w_c = in.matrix(prefix + "w_c", N, E);
  w.ssm.a_log = in.matrix(prefix + "a_log", E, N);
  w.ssm.b_rule = cfg.b_rule;
  w.out_proj = in.matrix(prefix + "out_proj", D, E);
  return w;
}

SsmState MambaBlockWeights::initial_state() const {
  return SsmState::zeros(config.inner_dim(), config.state_dim, config.conv_width);
}

namespace {

void check_block_state(const MambaBlockWeights& w, const SsmState& s) {
  const std::size_t E = w.config.inner_dim();
  if (s.h.rows() != E || s.h.cols() != w.config.state_dim || s.conv.rows.cols() != E ||
      s.conv.width() != w.config.conv_width) {
    throw StateError("mamba block: state does not match block configuration");
  }
}

}  // namespace

Matrix mamba_block_forward(const MambaBlockWeights& w, const Matrix& x, ScanMode mode, SsmState* state) {
  const std::size_t L = x.rows(), D = w.config.model_dim, E = w.config.inner_dim();
  if (x.rows() == 0) throw PreconditionError("mamba_block_forward: empty sequence");
  if (x.cols() != D) {
    throw ShapeError("mamba_block_forward: input width " + std::to_string(x.cols()) +
                     " != model dim " + std::to_string(D));
  }
  if (state) check_block_state(w, *state);
  Matrix u(L, E), z(L, E);
  Vector uz(2 * E);
  for (std::size_t t = 0; t < L; ++t) {
    const Vector xn = rms_norm(x.row(t), w.norm_gain, w.config.norm_eps);
    matvec(w.in_proj, xn, uz);
    std::copy(uz.begin(), uz.begin() + static_cast<std::ptrdiff_t>(E), u.row(t).begin());
    std::copy(uz.begin() + static_cast<std::ptrdiff_t>(E), uz.end(), z.row(t).begin());
  }
  Matrix s = causal_conv1d(u, w.conv_kernel, w.conv_bias, state ? &state->conv : nullptr);
  for (auto& v : s.flat()) v = silu(v);
  auto scan = selective_scan(s, w.ssm, mode, state ? state->h : Matrix{});
  if (state) state->h = std::move(scan.h_final);
  Matrix out = x;
  Vector g(E);
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t ch = 0; ch < E; ++ch) g[ch] = scan.y(t, ch) * silu(z(t, ch));
    matvec_acc(w.out_proj, g, out.row(t));
  }
  return out;
}

Vector mamba_block_step(const MambaBlockWeights& w, SsmState& state, std::span<const double> x_t) {
  const std::size_t D = w.config.model_dim, E = w.config.inner_dim();
  require_shape(x_t.size() == D, "mamba_block_step: input width != model dim");
  check_block_state(w, state);
  const Vector xn = rms_norm(x_t, w.norm_gain, w.config.norm_eps);
  Vector uz(2 * E);
  matvec(w.in_proj, xn, uz);
  const std::span<const double> u(uz.data(), E), z(uz.data() + E, E);
  Vector s = conv_step(state.conv, u, w.conv_kernel, w.conv_bias);
  for (auto& v : s) v = silu(v);
  const Vector y = ssm_step(state, s, w.ssm);
  Vector g(E);
  for (std::size_t ch = 0; ch < E; ++ch) g[ch] = y[ch] * silu(z[ch]);
  Vector out(x_t.begin(), x_t.end());
  matvec_acc(w.out_proj, g, out);
  return out;
}

Matrix mamba_block_forward_train(const MambaBlockWeights& w, const Matrix& x, MambaBlockCache& cache) {
  const std::size_t L = x.rows(), D = w.config.model_dim, E = w.config.inner_dim();
  const std::size_t N = w.config.state_dim, R = w.ssm.dt_rank();
  if (L == 0) throw PreconditionError("mamba_block_forward_train: empty sequence");
  require_shape(x.cols() == D, "mamba_block_forward_train: input width != model dim");
  cache.x = x;
  cache.x_norm = Matrix(L, D);
  cache.inv_rms = Matrix(L, 1);
  cache.u = Matrix(L, E);
  cache.z = Matrix(L, E);
  Vector xg(D), uz(2 * E);
  for (std::size_t t = 0; t < L; ++t) {
    double ms = 0.0;
    for (double v : x.row(t)) ms += v * v;
    ms /= static_cast<double>(D);
    const double r = 1.0 / std::sqrt(ms + w.config.norm_eps);
    cache.inv_rms(t, 0) = r;
    for (std::size_t i = 0; i < D; ++i) {
      cache.x_norm(t, i) = x(t, i) * r;
      xg[i] = w.norm_gain[i] * cache.x_norm(t, i);
    }
    matvec(w.in_proj, xg, uz);
    for (std::size_t ch = 0; ch < E; ++ch) {
      cache.u(t, ch) = uz[ch];
      cache.z(t, ch) = uz[E + ch];
    }
  }
  cache.v = causal_conv1d(cache.u, w.conv_kernel, w.conv_bias);
  cache.s = cache.v;
  for (auto& v : cache.s.flat()) v = silu(v);

  cache.dt_low = Matrix(L, R);
  cache.dt_pre = Matrix(L, E);
  cache.delta = Matrix(L, E);
  cache.b = Matrix(L, N);
  cache.c = Matrix(L, N);
  for (std::size_t t = 0; t < L; ++t) {
    matvec(w.ssm.dt_down, cache.s.row(t), cache.dt_low.row(t));
    matvec(w.ssm.dt_up, cache.dt_low.row(t), cache.dt_pre.row(t));
    for (std::size_t ch = 0; ch < E; ++ch) {
      cache.dt_pre(t, ch) += w.ssm.dt_bias[ch];
      cache.delta(t, ch) = std::max(softplus(cache.dt_pre(t, ch)), std::numeric_limits<double>::min());
    }
    matvec(w.ssm.w_b, cache.s.row(t), cache.b.row(t));
    matvec(w.ssm.w_c, cache.s.row(t), cache.c.row(t));
  }
  const Matrix a = w.ssm.a();
  cache.h.assign(L + 1, Matrix(E, N));
  cache.y = Matrix(L, E);
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t ch = 0; ch < E; ++ch) {
      double acc = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        double a_bar, u;
        discretize_entry(cache.delta(t, ch), a(ch, n), cache.b(t, n), cache.s(t, ch), w.ssm.b_rule, a_bar, u);
        const double hv = a_bar * cache.h[t](ch, n) + u;
        cache.h[t + 1](ch, n) = hv;
        acc += cache.c(t, n) * hv;
      }
      cache.y(t, ch) = acc;
    }
  }
  Matrix out = x;
  Vector g(E);
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t ch = 0; ch < E; ++ch) g[ch] = cache.y(t, ch) * silu(cache.z(t, ch));
    matvec_acc(w.out_proj, g, out.row(t));
  }
  return out;
}

Matrix mamba_block_backward(const MambaBlockWeights& w, const MambaBlockCache& cache,
                            const Matrix& d_out, MambaBlockWeights& grads) {
  const std::size_t L = cache.x.rows(), D = w.config.model_dim, E = w.config.inner_dim();
  const std::size_t N = w.config.state_dim, R = w.ssm.dt_rank(), W = w.config.conv_width;
  require_shape(d_out.rows() == L && d_out.cols() == D, "mamba_block_backward: gradient shape mismatch");

  Matrix dx = d_out;  // residual path
  Matrix dy(L, E), dz(L, E);
  Vector g(E), dg(E);
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t ch = 0; ch < E; ++ch) g[ch] = cache.y(t, ch) * silu(cache.z(t, ch));
    outer_acc(grads.out_proj, d_out.row(t), g);
    std::fill(dg.begin(), dg.end(), 0.0);
    matvec_t_acc(w.out_proj, d_out.row(t), dg);
    for (std::size_t ch = 0; ch < E; ++ch) {
      const double zc = cache.z(t, ch);
      dy(t, ch) = dg[ch] * silu(zc);
      dz(t, ch) = dg[ch] * cache.y(t, ch) * silu_grad(zc);
    }
  }

  // Reverse-time pass through the recurrence.
  const Matrix a = w.ssm.a();
  Matrix ds(L, E), d_delta(L, E), db(L, N), dc(L, N), da(E, N), dh(E, N);
  for (std::size_t t = L; t-- > 0;) {
    const Matrix& h_prev = cache.h[t];
    const Matrix& h_cur = cache.h[t + 1];
    for (std::size_t n = 0; n < N; ++n) {
      double acc = 0.0;
      for (std::size_t ch = 0; ch < E; ++ch) acc += dy(t, ch) * h_cur(ch, n);
      dc(t, n) = acc;
    }
    for (std::size_t ch = 0; ch < E; ++ch) {
      const double dlt = cache.delta(t, ch);
      const double sx = cache.s(t, ch);
      for (std::size_t n = 0; n < N; ++n) {
        const double an = a(ch, n);
        const double bn = cache.b(t, n);
        const double gh = dh(ch, n) + dy(t, ch) * cache.c(t, n);
        const double a_bar = std::exp(dlt * an);
        const double d_abar = gh * h_prev(ch, n);
        d_delta(t, ch) += d_abar * a_bar * an;
        da(ch, n) += d_abar * a_bar * dlt;
        if (w.ssm.b_rule == BRule::Euler) {
          d_delta(t, ch) += gh * bn * sx;
          db(t, n) += gh * dlt * sx;
          ds(t, ch) += gh * dlt * bn;
        } else {
          const double da_arg = dlt * an;
          const double em = std::expm1(da_arg);
          const double b_bar = (da_arg == 0.0) ? dlt * bn : em / an * bn;
          d_delta(t, ch) += gh * sx * a_bar * bn;
          da(ch, n) += gh * sx * bn * (dlt * a_bar * an - em) / (an * an);
          db(t, n) += gh * sx * ((da_arg == 0.0) ? dlt : em / an);
          ds(t, ch) += gh * b_bar;
        }
        dh(ch, n) = gh * a_bar;
      }
    }
  }
  for (std::size_t i = 0; i < da.size(); ++i) grads.ssm.a_log.flat()[i] += da.flat()[i] * a.flat()[i];

  Vector d_pre(E), d_low(R);
  for (std::size_t t = 0; t < L; ++t) {
    outer_acc(grads.ssm.w_b, db.row(t), cache.s.row(t));
    matvec_t_acc(w.ssm.w_b, db.row(t), ds.row(t));
    outer_acc(grads.ssm.w_c, dc.row(t), cache.s.row(t));
    matvec_t_acc(w.ssm.w_c, dc.row(t), ds.row(t));
    for (std::size_t ch = 0; ch < E; ++ch) {
      d_pre[ch] = d_delta(t, ch) * sigmoid(cache.dt_pre(t, ch));
      grads.ssm.dt_bias[ch] += d_pre[ch];
    }
    outer_acc(grads.ssm.dt_up, d_pre, cache.dt_low.row(t));
    std::fill(d_low.begin(), d_low.end(), 0.0);
    matvec_t_acc(w.ssm.dt_up, d_pre, d_low);
    outer_acc(grads.ssm.dt_down, d_low, cache.s.row(t));
    matvec_t_acc(w.ssm.dt_down, d_low, ds.row(t));
  }

  Matrix du(L, E);
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t ch = 0; ch < E; ++ch) {
      const double dv = ds(t, ch) * silu_grad(cache.v(t, ch));
      grads.conv_bias[ch] += dv;
      for (std::size_t k = 0; k < W; ++k) {
        const auto src = static_cast<std::ptrdiff_t>(t + k) - static_cast<std::ptrdiff_t>(W - 1);
        if (src < 0) continue;
        grads.conv_kernel(ch, k) += dv * cache.u(static_cast<std::size_t>(src), ch);
        du(static_cast<std::size_t>(src), ch) += dv * w.conv_kernel(ch, k);
      }
    }
  }

  Vector duz(2 * E), xg(D), dxg(D);
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t ch = 0; ch < E; ++ch) {
      duz[ch] = du(t, ch);
      duz[E + ch] = dz(t, ch);
    }
    for (std::size_t i = 0; i < D; ++i) xg[i] = w.norm_gain[i] * cache.x_norm(t, i);
    outer_acc(grads.in_proj, duz, xg);
    std::fill(dxg.begin(), dxg.end(), 0.0);
    matvec_t_acc(w.in_proj, duz, dxg);
    const double r = cache.inv_rms(t, 0);
    double dot = 0.0;
    for (std::size_t i = 0; i < D; ++i) {
      grads.norm_gain[i] += dxg[i] * cache.x_norm(t, i);
      dot += dxg[i] * w.norm_gain[i] * cache.x(t, i);
    }
    for (std::size_t i = 0; i < D; ++i) {
      dx(t, i) += r * dxg[i] * w.norm_gain[i] - r * r * r * cache.x(t, i) * dot / static_cast<double>(D);
    }
  }
  return dx;
}

}  // namespace cobra::ssm
