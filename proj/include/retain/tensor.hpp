#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace retain {

using Shape = std::vector<std::size_t>;

/// Dense row-major array of doubles.
///
/// Rank 0 (scalar), 1 (vector) and 2 (matrix) are what the models use. A
/// rank-1 tensor of length n is viewed as a 1 x n row wherever a matrix view
/// is required.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor identity(std::size_t n);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  // Matrix view.
  std::size_t rows() const noexcept { return shape_.size() == 2 ? shape_[0] : 1; }
  std::size_t cols() const noexcept {
    return shape_.empty() ? 1 : shape_.size() == 1 ? shape_[0] : shape_[1];
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  double* raw() noexcept { return data_.data(); }
  const double* raw() const noexcept { return data_.data(); }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }
  double& at(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const noexcept { return data_[r * cols() + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols(), cols()};
  }

  /// The single element of a size-1 tensor.
  double item() const;

  bool all_finite() const noexcept;
  std::string shape_string() const;

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

std::size_t element_count(const Shape& shape) noexcept;
std::string to_string(const Shape& shape);

/// Largest absolute elementwise difference; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);

namespace kernels {

// Plain (non-differentiable) kernels shared by the autodiff ops and the
// value-level model code. All accumulate in a fixed loop order, so results
// are reproducible bit for bit.

/// Row-major operands with explicit leading dimensions (row strides):
/// out[m x n] += a[m x k] * b[k x n].
struct GemmArgs {
  const double* a;
  const double* b;
  double* out;
  std::size_t m, k, n;
  std::size_t lda, ldb, ldo;
};
void gemm_acc(const GemmArgs& args);
/// out += a * b for a (m x k), b (k x n), out (m x n).
void gemm_acc(const Tensor& a, const Tensor& b, Tensor& out);
/// Transposed copy of a matrix view.
Tensor transpose(const Tensor& a);
/// a * b
Tensor matmul(const Tensor& a, const Tensor& b);
/// a * b^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);
/// a^T * b
Tensor matmul_tn(const Tensor& a, const Tensor& b);

}  // namespace kernels

}  // namespace retain
