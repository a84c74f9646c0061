// Sparse operators over radiance indices. Assembly uses coordinate entries,
// solves use CSR. Values are nonnegative reals; the spectra they act on are
// complex.
#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "dart/common.hpp"

namespace dart {

struct CooEntry {
  std::uint32_t row = 0;
  std::uint32_t col = 0;
  double val = 0.0;
};

struct SparseOperator {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<std::uint32_t> row_ptr;  // size rows+1
  std::vector<std::uint32_t> col_idx;  // size nnz
  std::vector<double> val;             // size nnz

  std::size_t nnz() const { return val.size(); }

  static SparseOperator from_coo(std::uint32_t rows, std::uint32_t cols,
                                 std::vector<CooEntry> entries) {
    // Duplicates accumulate by summation; entries end up sorted (row, col).
    std::sort(entries.begin(), entries.end(), [](const CooEntry& a, const CooEntry& b) {
      return a.row != b.row ? a.row < b.row : a.col < b.col;
    });
    SparseOperator op;
    op.rows = rows;
    op.cols = cols;
    op.row_ptr.assign(rows + 1, 0);
    for (std::size_t i = 0; i < entries.size();) {
      std::size_t j = i + 1;
      double v = entries[i].val;
      while (j < entries.size() && entries[j].row == entries[i].row &&
             entries[j].col == entries[i].col) {
        v += entries[j].val;
        ++j;
      }
      require(entries[i].row < rows && entries[i].col < cols, "sparse entry out of range");
      op.col_idx.push_back(entries[i].col);
      op.val.push_back(v);
      op.row_ptr[entries[i].row + 1]++;
      i = j;
    }
    for (std::uint32_t r = 0; r < rows; ++r) op.row_ptr[r + 1] += op.row_ptr[r];
    return op;
  }

  // y = A x
  void matvec(const c64* x, c64* y) const {
    for (std::uint32_t r = 0; r < rows; ++r) {
      c64 acc{0.0, 0.0};
      for (std::uint32_t e = row_ptr[r]; e < row_ptr[r + 1]; ++e)
        acc += val[e] * x[col_idx[e]];
      y[r] = acc;
    }
  }

  // y = A^T x
  void matvec_transpose(const c64* x, c64* y) const {
    std::fill(y, y + cols, c64{0.0, 0.0});
    for (std::uint32_t r = 0; r < rows; ++r) {
      c64 xr = x[r];
      for (std::uint32_t e = row_ptr[r]; e < row_ptr[r + 1]; ++e)
        y[col_idx[e]] += val[e] * xr;
    }
  }

  double row_sum(std::uint32_t r) const {
    double s = 0.0;
    for (std::uint32_t e = row_ptr[r]; e < row_ptr[r + 1]; ++e) s += val[e];
    return s;
  }

  std::vector<double> column_sums() const {
    std::vector<double> s(cols, 0.0);
    for (std::uint32_t r = 0; r < rows; ++r)
      for (std::uint32_t e = row_ptr[r]; e < row_ptr[r + 1]; ++e) s[col_idx[e]] += val[e];
    return s;
  }

  const double* find(std::uint32_t r, std::uint32_t c) const {
    for (std::uint32_t e = row_ptr[r]; e < row_ptr[r + 1]; ++e)
      if (col_idx[e] == c) return &val[e];
    return nullptr;
  }
};

}  // namespace dart
