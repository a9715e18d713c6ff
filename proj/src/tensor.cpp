#include "cofair/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "cofair/error.hpp"

namespace cofair {

Tensor2::Tensor2(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Tensor2::Tensor2(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ShapeError("tensor: " + std::to_string(data_.size()) + " values for shape " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
}

void Tensor2::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

std::string Tensor2::shape_string() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

bool bitwise_equal(const Tensor2& a, const Tensor2& b) {
  if (!a.same_shape(b)) return false;
  return a.size() == 0 ||
         std::memcmp(a.values().data(), b.values().data(), a.size() * sizeof(double)) == 0;
}

bool all_finite(const Tensor2& t) {
  return std::all_of(t.values().begin(), t.values().end(), [](double x) { return std::isfinite(x); });
}

double max_abs_diff(const Tensor2& a, const Tensor2& b) {
  if (!a.same_shape(b)) throw ShapeError("max_abs_diff: " + a.shape_string() + " vs " + b.shape_string());
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

namespace {

void require(bool ok, const char* op, const Tensor2& a, const Tensor2& b) {
  if (!ok) throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape_string() + " and " + b.shape_string());
}

}  // namespace

Tensor2 matmul(const Tensor2& a, const Tensor2& b) {
  Tensor2 out(a.rows(), b.cols());
  require(a.cols() == b.rows(), "matmul", a, b);
  matmul_rows_accumulate(a, b, 0, out);
  return out;
}

void matmul_rows_accumulate(const Tensor2& a, const Tensor2& w, std::size_t row_offset, Tensor2& out) {
  require(row_offset + a.cols() <= w.rows() && out.rows() == a.rows() && out.cols() == w.cols(),
          "matmul_rows_accumulate", a, w);
  const std::size_t n = a.rows(), k = a.cols(), m = w.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double* o = out.row(i).data();
    const double* ar = a.row(i).data();
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ar[p];
      const double* wr = w.row(row_offset + p).data();
      for (std::size_t j = 0; j < m; ++j) o[j] += av * wr[j];
    }
  }
}

Tensor2 matmul_tn(const Tensor2& a, const Tensor2& b) {
  Tensor2 out(a.cols(), b.cols());
  matmul_tn_accumulate_rows(a, b, 0, out);
  return out;
}

void matmul_tn_accumulate_rows(const Tensor2& a, const Tensor2& b, std::size_t row_offset, Tensor2& out) {
  require(a.rows() == b.rows() && row_offset + a.cols() <= out.rows() && out.cols() == b.cols(),
          "matmul_tn", a, b);
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  for (std::size_t i = 0; i < n; ++i) {
    const double* ar = a.row(i).data();
    const double* br = b.row(i).data();
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ar[p];
      double* o = out.row(row_offset + p).data();
      for (std::size_t j = 0; j < m; ++j) o[j] += av * br[j];
    }
  }
}

Tensor2 matmul_nt(const Tensor2& a, const Tensor2& b) {
  require(a.cols() == b.cols(), "matmul_nt", a, b);
  return matmul_nt_rows(a, b, 0, b.rows());
}

Tensor2 matmul_nt_rows(const Tensor2& a, const Tensor2& w, std::size_t row_offset, std::size_t width) {
  // a (n x m) times the transpose of w[row_offset : row_offset+width, :] (width x m).
  require(a.cols() == w.cols() && row_offset + width <= w.rows(), "matmul_nt", a, w);
  const std::size_t n = a.rows(), m = a.cols();
  Tensor2 wt(m, width);
  for (std::size_t j = 0; j < width; ++j) {
    const double* wr = w.row(row_offset + j).data();
    for (std::size_t p = 0; p < m; ++p) wt(p, j) = wr[p];
  }
  Tensor2 out(n, width);
  for (std::size_t i = 0; i < n; ++i) {
    const double* ar = a.row(i).data();
    double* __restrict o = out.row(i).data();
    for (std::size_t p = 0; p < m; ++p) {
      const double av = ar[p];
      const double* __restrict tr = wt.row(p).data();
      for (std::size_t j = 0; j < width; ++j) o[j] += av * tr[j];
    }
  }
  return out;
}

void add_inplace(Tensor2& dst, const Tensor2& src) {
  require(dst.same_shape(src), "add", dst, src);
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void scale_inplace(Tensor2& dst, double factor) {
  for (auto& x : dst.values()) x *= factor;
}

void add_row_broadcast(Tensor2& dst, const Tensor2& bias) {
  require(bias.rows() == 1 && bias.cols() == dst.cols(), "add_row_broadcast", dst, bias);
  for (std::size_t i = 0; i < dst.rows(); ++i) {
    auto r = dst.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += bias[j];
  }
}

Tensor2 column_sums(const Tensor2& t) {
  Tensor2 out(1, t.cols());
  for (std::size_t i = 0; i < t.rows(); ++i) {
    auto r = t.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) out[j] += r[j];
  }
  return out;
}

Tensor2 gather_rows(const Tensor2& table, std::span<const std::size_t> indices) {
  Tensor2 out(indices.size(), table.cols());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= table.rows()) {
      throw RangeError("gather_rows: index " + std::to_string(indices[k]) + " outside table of " +
                       std::to_string(table.rows()) + " rows");
    }
    std::copy_n(table.row(indices[k]).data(), table.cols(), out.row(k).data());
  }
  return out;
}

void scatter_add_rows(Tensor2& table, std::span<const std::size_t> indices, const Tensor2& rows) {
  require(rows.rows() == indices.size() && rows.cols() == table.cols(), "scatter_add_rows", table, rows);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    auto dst = table.row(indices[k]);
    auto src = rows.row(k);
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
  }
}

}  // namespace cofair
