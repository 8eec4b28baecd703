#include "retain/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "retain/errors.hpp"

namespace retain {

std::size_t element_count(const Shape& shape) noexcept {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (element_count(shape_) != data_.size()) {
    throw ShapeError("tensor shape " + to_string(shape_) + " does not match " +
                     std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor(Shape{n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor(Shape{rows, cols}, std::move(values));
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> values;
  values.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged rows in matrix literal");
    values.insert(values.end(), row.begin(), row.end());
  }
  return matrix(r, c, std::move(values));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape_));
  return data_[0];
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string Tensor::shape_string() const { return to_string(shape_); }

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff: " + a.shape_string() + " vs " + b.shape_string());
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

namespace kernels {

namespace {

void require_rank2ish(const Tensor& t, const char* what) {
  if (t.rank() > 2) throw ShapeError(std::string(what) + ": rank > 2 tensor " + t.shape_string());
}

}  // namespace

namespace {

constexpr std::size_t kTileRows = 4;

using Lane = double __attribute__((vector_size(64)));
constexpr std::size_t kLane = 8;

Lane load(const double* p) {
  Lane v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

void store(double* p, Lane v) { std::memcpy(p, &v, sizeof v); }

// out[r0..r0+R, c0..c0+V*8) += a[r0..r0+R, :] * b[:, c0..c0+V*8), accumulated
// in registers over the whole inner dimension in ascending order.
template <std::size_t R, std::size_t V>
void tile(const GemmArgs& g, std::size_t r0, std::size_t c0) {
  Lane acc[R][V];
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t v = 0; v < V; ++v) acc[r][v] = load(g.out + (r0 + r) * g.ldo + c0 + v * kLane);
  for (std::size_t p = 0; p < g.k; ++p) {
    Lane brow[V];
    for (std::size_t v = 0; v < V; ++v) brow[v] = load(g.b + p * g.ldb + c0 + v * kLane);
    for (std::size_t r = 0; r < R; ++r) {
      const double s = g.a[(r0 + r) * g.lda + p];
      for (std::size_t v = 0; v < V; ++v) acc[r][v] += s * brow[v];
    }
  }
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t v = 0; v < V; ++v) store(g.out + (r0 + r) * g.ldo + c0 + v * kLane, acc[r][v]);
}

// Same for the last n % 8 columns, one at a time.
template <std::size_t R>
void edge(const GemmArgs& g, std::size_t r0, std::size_t c) {
  double acc[R];
  for (std::size_t r = 0; r < R; ++r) acc[r] = g.out[(r0 + r) * g.ldo + c];
  for (std::size_t p = 0; p < g.k; ++p)
    for (std::size_t r = 0; r < R; ++r) acc[r] += g.a[(r0 + r) * g.lda + p] * g.b[p * g.ldb + c];
  for (std::size_t r = 0; r < R; ++r) g.out[(r0 + r) * g.ldo + c] = acc[r];
}

template <std::size_t R>
void row_block(const GemmArgs& g, std::size_t r0) {
  std::size_t c0 = 0;
  for (; c0 + 4 * kLane <= g.n; c0 += 4 * kLane) tile<R, 4>(g, r0, c0);
  for (; c0 + 2 * kLane <= g.n; c0 += 2 * kLane) tile<R, 2>(g, r0, c0);
  for (; c0 + kLane <= g.n; c0 += kLane) tile<R, 1>(g, r0, c0);
  for (; c0 < g.n; ++c0) edge<R>(g, r0, c0);
}

}  // namespace

void gemm_acc(const GemmArgs& g) {
  std::size_t r0 = 0;
  for (; r0 + kTileRows <= g.m; r0 += kTileRows) row_block<kTileRows>(g, r0);
  for (; r0 < g.m; ++r0) row_block<1>(g, r0);
}

void gemm_acc(const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k || out.rows() != m || out.cols() != n) {
    throw ShapeError("gemm: " + a.shape_string() + " * " + b.shape_string() + " -> " +
                     out.shape_string());
  }
  gemm_acc(GemmArgs{a.raw(), b.raw(), out.raw(), m, k, n, k, n, n});
}

Tensor transpose(const Tensor& a) {
  require_rank2ish(a, "transpose");
  const std::size_t r = a.rows(), c = a.cols();
  Tensor t(Shape{c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) t.at(j, i) = a.at(i, j);
  return t;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2ish(a, "matmul");
  require_rank2ish(b, "matmul");
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ, " + a.shape_string() + " * " +
                     b.shape_string());
  }
  Tensor out(Shape{a.rows(), b.cols()});
  gemm_acc(a, b, out);
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank2ish(a, "matmul_nt");
  require_rank2ish(b, "matmul_nt");
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: inner dimensions differ, " + a.shape_string() + " * " +
                     b.shape_string() + "^T");
  }
  Tensor out(Shape{a.rows(), b.rows()});
  gemm_acc(a, transpose(b), out);
  return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_rank2ish(a, "matmul_tn");
  require_rank2ish(b, "matmul_tn");
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn: inner dimensions differ, " + a.shape_string() + "^T * " +
                     b.shape_string());
  }
  Tensor out(Shape{a.cols(), b.cols()});
  gemm_acc(transpose(a), b, out);
  return out;
}

}  // namespace kernels

}  // namespace retain
