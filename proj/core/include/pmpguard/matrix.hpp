#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "pmpguard/error.hpp"

namespace pmpguard {

// Dense row-major matrix, generic over the scalar type so the same kernels
// can run on plain doubles and on autodiff variables.
template <class T>
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<T> data;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, T(0)) {}
  Mat(int r, int c, std::vector<T> d) : rows(r), cols(c), data(std::move(d)) {}

  T& at(int i, int j) { return data[static_cast<size_t>(i) * cols + j]; }
  const T& at(int i, int j) const { return data[static_cast<size_t>(i) * cols + j]; }

  std::span<T> row(int i) { return {data.data() + static_cast<size_t>(i) * cols, static_cast<size_t>(cols)}; }
  std::span<const T> row(int i) const {
    return {data.data() + static_cast<size_t>(i) * cols, static_cast<size_t>(cols)};
  }

  bool empty() const { return rows == 0 || cols == 0; }
  size_t size() const { return data.size(); }
};

using Matrix = Mat<double>;

inline bool all_finite(const Matrix& m) {
  for (double x : m.data)
    if (!std::isfinite(x)) return false;
  return true;
}

inline bool operator==(const Matrix& a, const Matrix& b) {
  return a.rows == b.rows && a.cols == b.cols && a.data == b.data;
}

template <class T>
Mat<T> to_mat(const Matrix& m) {
  Mat<T> out(m.rows, m.cols);
  for (size_t i = 0; i < m.data.size(); ++i) out.data[i] = T(m.data[i]);
  return out;
}

template <class T>
Mat<T> transpose(const Mat<T>& m) {
  Mat<T> out(m.cols, m.rows);
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) out.at(j, i) = m.at(i, j);
  return out;
}

}  // namespace pmpguard
