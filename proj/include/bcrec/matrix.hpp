#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <unordered_map>
#include <vector>

namespace bcrec {

// Dense row-major matrix of doubles. Rows are the unit of access for
// embedding tables, so the interface is row-centric.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> row(std::size_t r) noexcept {
    return {data_.data() + r * cols_, cols_};
  }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Gradient accumulator over a sparse set of rows of one parameter matrix.
// Rows are kept in first-touch order so that downstream updates are
// deterministic.
class RowGrads {
 public:
  RowGrads() = default;
  explicit RowGrads(std::size_t cols) : cols_(cols) {}

  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return rows_.size(); }
  bool empty() const noexcept { return rows_.empty(); }

  // Returns the accumulation buffer for `r`, creating a zero row on first use.
  std::span<double> at(std::size_t r) {
    auto [it, inserted] = index_.try_emplace(r, rows_.size());
    if (inserted) {
      rows_.push_back(r);
      values_.resize(values_.size() + cols_, 0.0);
    }
    return {values_.data() + it->second * cols_, cols_};
  }

  // Nullptr-like empty span when the row was never touched.
  std::span<const double> find(std::size_t r) const {
    auto it = index_.find(r);
    if (it == index_.end()) return {};
    return {values_.data() + it->second * cols_, cols_};
  }

  const std::vector<std::size_t>& touched() const noexcept { return rows_; }
  std::span<const double> value(std::size_t k) const noexcept {
    return {values_.data() + k * cols_, cols_};
  }
  std::span<double> value(std::size_t k) noexcept { return {values_.data() + k * cols_, cols_}; }

  void scale(double s) {
    for (double& v : values_) v *= s;
  }

  void add(const RowGrads& other, double s = 1.0) {
    for (std::size_t k = 0; k < other.size(); ++k) {
      auto dst = at(other.rows_[k]);
      auto src = other.value(k);
      for (std::size_t c = 0; c < cols_; ++c) dst[c] += s * src[c];
    }
  }

 private:
  std::size_t cols_ = 0;
  std::vector<std::size_t> rows_;
  std::vector<double> values_;
  std::unordered_map<std::size_t, std::size_t> index_;
};

}  // namespace bcrec
