#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace gustcast {

// Dense row-major matrix used by the tabular baselines.
struct Matrix {
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  std::vector<double> data;

  static Matrix zeros(std::int64_t rows, std::int64_t cols) {
    Matrix m;
    m.rows = rows;
    m.cols = cols;
    m.data.assign(static_cast<std::size_t>(rows * cols), 0.0);
    return m;
  }

  double at(std::int64_t r, std::int64_t c) const { return data[static_cast<std::size_t>(r * cols + c)]; }
  double& at(std::int64_t r, std::int64_t c) { return data[static_cast<std::size_t>(r * cols + c)]; }
  const double* row(std::int64_t r) const { return data.data() + r * cols; }

  Matrix select_rows(const std::vector<std::int64_t>& indices) const {
    Matrix out;
    out.rows = static_cast<std::int64_t>(indices.size());
    out.cols = cols;
    out.data.reserve(static_cast<std::size_t>(out.rows * cols));
    for (std::int64_t r : indices) {
      if (r < 0 || r >= rows) throw std::invalid_argument("matrix: row index out of range");
      out.data.insert(out.data.end(), data.begin() + r * cols, data.begin() + (r + 1) * cols);
    }
    return out;
  }

  // Horizontal concatenation [this | other].
  Matrix hstack(const Matrix& other) const {
    if (rows != other.rows) throw std::invalid_argument("matrix: hstack row mismatch");
    Matrix out;
    out.rows = rows;
    out.cols = cols + other.cols;
    out.data.reserve(static_cast<std::size_t>(out.rows * out.cols));
    for (std::int64_t r = 0; r < rows; ++r) {
      out.data.insert(out.data.end(), data.begin() + r * cols, data.begin() + (r + 1) * cols);
      out.data.insert(out.data.end(), other.data.begin() + r * other.cols,
                      other.data.begin() + (r + 1) * other.cols);
    }
    return out;
  }
};

}  // namespace gustcast
