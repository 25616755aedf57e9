#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace fedchem {

// Row-major dense matrix of doubles. Deliberately minimal: the model code
// spells out its loops so evaluation order (and therefore bit-level output)
// is fixed by this source, not by a library's dispatch choices.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  double* row(std::size_t r) { return data.data() + r * cols; }
  const double* row(std::size_t r) const { return data.data() + r * cols; }

  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

  void fill(double v) { data.assign(data.size(), v); }
};

struct ShapeMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace fedchem
