#include "nmcdr/numerics/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace nmcdr::num {

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (values_.size() != rows_ * cols_) {
    std::ostringstream msg;
    msg << "tensor of shape " << rows << "x" << cols << " given " << values_.size() << " values";
    throw ShapeError(msg.str());
  }
}

Tensor::Tensor(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  values_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw ShapeError("ragged tensor literal");
    values_.insert(values_.end(), r.begin(), r.end());
  }
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t(n, n);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

Tensor Tensor::row(std::span<const double> values) {
  return Tensor(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

std::string Tensor::shape_str() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

void Tensor::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

bool Tensor::all_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

double Tensor::frobenius_norm() const noexcept {
  double s = 0.0;
  for (double v : values_) s += v * v;
  return std::sqrt(s);
}

double Tensor::sum() const noexcept { return std::accumulate(values_.begin(), values_.end(), 0.0); }

namespace {

void check_out(const Tensor& out, std::size_t rows, std::size_t cols, const char* what) {
  if (out.rows() != rows || out.cols() != cols) {
    throw ShapeError(std::string(what) + ": output " + out.shape_str() + " expected " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
}

}  // namespace

void matmul_into(const Tensor& a, const Tensor& b, Tensor& out, bool accumulate) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: " + a.shape_str() + " vs " + b.shape_str());
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  check_out(out, n, m, "matmul");
  if (!accumulate) out.fill(0.0);
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = po + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      if (av == 0.0) continue;
      const double* brow = pb + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
}

void matmul_bt_into(const Tensor& a, const Tensor& b, Tensor& out, bool accumulate) {
  if (a.cols() != b.cols()) throw ShapeError("matmul_bt: " + a.shape_str() + " vs " + b.shape_str());
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  check_out(out, n, m, "matmul_bt");
  if (!accumulate) out.fill(0.0);
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = pa + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const double* brow = pb + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      po[i * m + j] += s;
    }
  }
}

void matmul_at_into(const Tensor& a, const Tensor& b, Tensor& out, bool accumulate) {
  if (a.rows() != b.rows()) throw ShapeError("matmul_at: " + a.shape_str() + " vs " + b.shape_str());
  const std::size_t n = a.cols(), k = a.rows(), m = b.cols();
  check_out(out, n, m, "matmul_at");
  if (!accumulate) out.fill(0.0);
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = pa + p * n;
    const double* brow = pb + p * m;
    for (std::size_t i = 0; i < n; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* orow = po + i * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  Tensor out(a.rows(), b.cols());
  matmul_into(a, b, out);
  return out;
}

Tensor transpose(const Tensor& a) {
  Tensor t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

double spectral_norm(const Tensor& a, int max_iterations, double tolerance) {
  if (a.empty()) return 0.0;
  const std::size_t n = a.cols();
  // Deterministic start with all components non-zero.
  Tensor x(n, 1);
  for (std::size_t i = 0; i < n; ++i) x[i] = 1.0 + 0.1 * static_cast<double>(i % 7);
  double norm_x = x.frobenius_norm();
  for (auto& v : x.values()) v /= norm_x;

  Tensor ax(a.rows(), 1);
  Tensor atax(n, 1);
  double sigma = 0.0;
  for (int it = 0; it < max_iterations; ++it) {
    matmul_into(a, x, ax);
    matmul_at_into(a, ax, atax);
    const double lambda = atax.frobenius_norm();
    if (lambda == 0.0) return 0.0;
    const double next = std::sqrt(lambda);
    for (std::size_t i = 0; i < n; ++i) x[i] = atax[i] / lambda;
    const bool done = std::abs(next - sigma) <= tolerance * std::max(1.0, next);
    sigma = next;
    if (done) break;
  }
  // Rayleigh-quotient refinement: ‖A x‖ for the final unit vector.
  matmul_into(a, x, ax);
  return std::max(sigma, ax.frobenius_norm());
}

}  // namespace nmcdr::num
