#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cobra/errors.hpp"

namespace cobra {

// Dense row-major matrix of doubles. Sequences are stored as (length x dim),
// one time step per row; weights as (out x in).
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> flat() { return data_; }
  std::span<const double> flat() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  void fill(double v);
  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

using Vector = std::vector<double>;

// y = W x (overwrites y).
void matvec(const Matrix& w, std::span<const double> x, std::span<double> y);
// y += W x.
void matvec_acc(const Matrix& w, std::span<const double> x, std::span<double> y);
// dx += W^T dy.
void matvec_t_acc(const Matrix& w, std::span<const double> dy, std::span<double> dx);
// dW += dy x^T.
void outer_acc(Matrix& dw, std::span<const double> dy, std::span<const double> x);
// Y = X W^T, row by row (sequence through a linear layer).
Matrix linear_rows(const Matrix& x, const Matrix& w);

double max_abs_diff(std::span<const double> a, std::span<const double> b);
double max_abs_diff(const Matrix& a, const Matrix& b);

double softplus(double x);
double sigmoid(double x);
double silu(double x);
double silu_grad(double x);
double gelu(double x);
double gelu_grad(double x);

void require_shape(bool ok, const std::string& what);

// Seeded initializers. Every random draw in the library goes through an
// explicitly passed engine so identical seeds reproduce identical weights.
using Rng = std::mt19937_64;
Matrix random_normal(std::size_t rows, std::size_t cols, double stddev, Rng& rng);
Matrix random_uniform(std::size_t rows, std::size_t cols, double lo, double hi, Rng& rng);

}  // namespace cobra
