#include "cobra/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace cobra {

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void require_shape(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

void matvec(const Matrix& w, std::span<const double> x, std::span<double> y) {
  require_shape(w.cols() == x.size() && w.rows() == y.size(), "matvec: shape mismatch");
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const auto wr = w.row(r);
    double acc = 0.0;
    for (std::size_t c = 0; c < wr.size(); ++c) acc += wr[c] * x[c];
    y[r] = acc;
  }
}

void matvec_acc(const Matrix& w, std::span<const double> x, std::span<double> y) {
  require_shape(w.cols() == x.size() && w.rows() == y.size(), "matvec_acc: shape mismatch");
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const auto wr = w.row(r);
    double acc = 0.0;
    for (std::size_t c = 0; c < wr.size(); ++c) acc += wr[c] * x[c];
    y[r] += acc;
  }
}

void matvec_t_acc(const Matrix& w, std::span<const double> dy, std::span<double> dx) {
  require_shape(w.rows() == dy.size() && w.cols() == dx.size(),
                "matvec_t_acc: shape mismatch");
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const auto wr = w.row(r);
    const double g = dy[r];
    if (g == 0.0) continue;
    for (std::size_t c = 0; c < wr.size(); ++c) dx[c] += wr[c] * g;
  }
}

void outer_acc(Matrix& dw, std::span<const double> dy, std::span<const double> x) {
  require_shape(dw.rows() == dy.size() && dw.cols() == x.size(), "outer_acc: shape mismatch");
  for (std::size_t r = 0; r < dw.rows(); ++r) {
    const double g = dy[r];
    if (g == 0.0) continue;
    auto dr = dw.row(r);
    for (std::size_t c = 0; c < dr.size(); ++c) dr[c] += g * x[c];
  }
}

Matrix linear_rows(const Matrix& x, const Matrix& w) {
  require_shape(x.cols() == w.cols(), "linear_rows: input width does not match weight");
  Matrix y(x.rows(), w.rows());
  for (std::size_t t = 0; t < x.rows(); ++t) matvec(w, x.row(t), y.row(t));
  return y;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  require_shape(a.size() == b.size(), "max_abs_diff: size mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  require_shape(a.same_shape(b), "max_abs_diff: shape mismatch");
  return max_abs_diff(a.flat(), b.flat());
}

double softplus(double x) {
  // log1p(exp(x)) without overflow for large x.
  if (x > 30.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double silu(double x) { return x * sigmoid(x); }

double silu_grad(double x) {
  const double s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

Matrix random_normal(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (auto& v : m.flat()) v = dist(rng);
  return m;
}

Matrix random_uniform(std::size_t rows, std::size_t cols, double lo, double hi, Rng& rng) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Matrix m(rows, cols);
  for (auto& v : m.flat()) v = dist(rng);
  return m;
}

}  // namespace cobra
