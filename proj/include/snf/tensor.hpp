#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace snf {

// Row-major dense matrix. Vectors (norm scales) are stored as 1 x n.
template <typename T>
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, T(0)) {}

  std::size_t size() const { return data.size(); }
  T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  const T& operator()(std::size_t r, std::size_t c) const {
    return data[r * cols + c];
  }
  T* row(std::size_t r) { return data.data() + r * cols; }
  const T* row(std::size_t r) const { return data.data() + r * cols; }
  std::span<T> span() { return data; }
  std::span<const T> span() const { return data; }

  bool operator==(const Matrix&) const = default;
};

}  // namespace snf
