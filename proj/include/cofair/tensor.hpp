#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace cofair {

// Dense row-major matrix of 64-bit reals. Vectors are 1xN or Nx1 tensors.
class Tensor2 {
 public:
  Tensor2() = default;
  Tensor2(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor2(std::size_t rows, std::size_t cols, std::vector<double> data);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  void fill(double value);
  bool same_shape(const Tensor2& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  std::string shape_string() const;

  // Element-wise value equality (so -0.0 == 0.0). Use bitwise_equal for checkpoints.
  friend bool operator==(const Tensor2& a, const Tensor2& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

bool bitwise_equal(const Tensor2& a, const Tensor2& b);
bool all_finite(const Tensor2& t);
double max_abs_diff(const Tensor2& a, const Tensor2& b);

// out = a * b
Tensor2 matmul(const Tensor2& a, const Tensor2& b);
// out = a^T * b
Tensor2 matmul_tn(const Tensor2& a, const Tensor2& b);
// out = a * b^T
Tensor2 matmul_nt(const Tensor2& a, const Tensor2& b);

// out += a * w[row_offset : row_offset + a.cols(), :]. Lets one affine map be
// applied to a column-concatenation piecewise.
void matmul_rows_accumulate(const Tensor2& a, const Tensor2& w, std::size_t row_offset, Tensor2& out);
// out += a^T * b written into rows [row_offset, row_offset + a.cols()) of out.
void matmul_tn_accumulate_rows(const Tensor2& a, const Tensor2& b, std::size_t row_offset, Tensor2& out);
// out = a * w[row_offset : row_offset + k, :]^T where k = w.rows() slice width.
Tensor2 matmul_nt_rows(const Tensor2& a, const Tensor2& w, std::size_t row_offset, std::size_t width);

void add_inplace(Tensor2& dst, const Tensor2& src);
void scale_inplace(Tensor2& dst, double factor);
// Adds the 1xC `bias` to every row of `dst`.
void add_row_broadcast(Tensor2& dst, const Tensor2& bias);
// 1xC column sums.
Tensor2 column_sums(const Tensor2& t);

// Rows of `table` selected by `indices`, in order.
Tensor2 gather_rows(const Tensor2& table, std::span<const std::size_t> indices);
// table[indices[k]] += rows[k]
void scatter_add_rows(Tensor2& table, std::span<const std::size_t> indices, const Tensor2& rows);

}  // namespace cofair
