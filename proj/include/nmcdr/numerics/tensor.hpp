#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace nmcdr::num {

/// Thrown when operand shapes are incompatible.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when an operation produces NaN or Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense row-major matrix of doubles. Vectors are 1×n rows.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> values);
  Tensor(std::initializer_list<std::initializer_list<double>> rows);

  static Tensor identity(std::size_t n);
  static Tensor row(std::span<const double> values);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> row_span(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
  std::span<const double> row_span(std::size_t r) const { return {values_.data() + r * cols_, cols_}; }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  double* data() noexcept { return values_.data(); }
  const double* data() const noexcept { return values_.data(); }

  bool same_shape(const Tensor& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  std::string shape_str() const;

  void fill(double v);
  bool all_finite() const noexcept;
  double frobenius_norm() const noexcept;
  double sum() const noexcept;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.values_ == b.values_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

// Raw kernels. `out` must already have the result shape; results are accumulated
// when `accumulate` is set.

/// out (+)= a · b
void matmul_into(const Tensor& a, const Tensor& b, Tensor& out, bool accumulate = false);
/// out (+)= a · bᵀ
void matmul_bt_into(const Tensor& a, const Tensor& b, Tensor& out, bool accumulate = false);
/// out (+)= aᵀ · b
void matmul_at_into(const Tensor& a, const Tensor& b, Tensor& out, bool accumulate = false);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

/// Largest singular value via power iteration on AᵀA.
double spectral_norm(const Tensor& a, int max_iterations = 100, double tolerance = 1e-10);

}  // namespace nmcdr::num
