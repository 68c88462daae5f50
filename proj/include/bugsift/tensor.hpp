#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "bugsift/common.hpp"

namespace bugsift {

// Row-major dense matrix. Deliberately minimal: the models in this project
// need contiguous storage, row views and a handful of BLAS-1 style loops,
// nothing more.
template <typename T>
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, T fill = T{})
      : rows(r), cols(c), data(r * c, fill) {}

  T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  const T& operator()(std::size_t r, std::size_t c) const {
    return data[r * cols + c];
  }

  std::span<T> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const T> row(std::size_t r) const {
    return {data.data() + r * cols, cols};
  }

  bool same_shape(const Matrix& o) const {
    return rows == o.rows && cols == o.cols;
  }

  void fill(T v) { data.assign(data.size(), v); }
};

template <typename T>
T dot(std::span<const T> a, std::span<const T> b) {
  T s = T{};
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// y += alpha * x
template <typename T>
void axpy(T alpha, std::span<const T> x, std::span<T> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

template <typename T>
void axpy(T alpha, std::span<T> x, std::span<T> y) {
  axpy(alpha, std::span<const T>(x), y);
}

// out = A * x  (A: m x n, x: n, out: m)
template <typename T>
void matvec(const Matrix<T>& a, std::span<const T> x, std::span<T> out) {
  for (std::size_t r = 0; r < a.rows; ++r) out[r] = dot(a.row(r), x);
}

// out += A * x
template <typename T>
void matvec_add(const Matrix<T>& a, std::span<const T> x, std::span<T> out) {
  for (std::size_t r = 0; r < a.rows; ++r) out[r] += dot(a.row(r), x);
}

// out += A^T * y  (A: m x n, y: m, out: n)
template <typename T>
void matvec_transpose_add(const Matrix<T>& a, std::span<const T> y,
                          std::span<T> out) {
  for (std::size_t r = 0; r < a.rows; ++r) {
    const T yr = y[r];
    if (yr == T{}) continue;
    std::span<const T> ar = a.row(r);
    for (std::size_t c = 0; c < a.cols; ++c) out[c] += yr * ar[c];
  }
}

// A += y * x^T  (outer-product accumulation)
template <typename T>
void outer_add(Matrix<T>& a, std::span<const T> y, std::span<const T> x) {
  for (std::size_t r = 0; r < a.rows; ++r) {
    const T yr = y[r];
    if (yr == T{}) continue;
    std::span<T> ar = a.row(r);
    for (std::size_t c = 0; c < a.cols; ++c) ar[c] += yr * x[c];
  }
}

template <typename T>
double squared_distance(std::span<const T> a, std::span<const T> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return s;
}

template <typename T>
double euclidean_distance(std::span<const T> a, std::span<const T> b) {
  return std::sqrt(squared_distance(a, b));
}

template <typename T>
double cosine_similarity(std::span<const T> a, std::span<const T> b) {
  double num = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    na += static_cast<double>(a[i]) * static_cast<double>(a[i]);
    nb += static_cast<double>(b[i]) * static_cast<double>(b[i]);
  }
  double denom = std::sqrt(na) * std::sqrt(nb);
  if (denom == 0.0) return 0.0;
  return num / denom;
}

template <typename T>
bool all_finite(const Matrix<T>& m) {
  for (T v : m.data)
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

template <typename T>
bool all_finite(const std::vector<T>& v) {
  for (T x : v)
    if (!std::isfinite(static_cast<double>(x))) return false;
  return true;
}

// Numerically stable logistic sigmoid.
template <typename T>
T sigmoid(T x) {
  if (x >= T{0}) {
    T e = std::exp(-x);
    return T{1} / (T{1} + e);
  }
  T e = std::exp(x);
  return e / (T{1} + e);
}

// log(sigmoid(x)) without overflow.
template <typename T>
T log_sigmoid(T x) {
  if (x >= T{0}) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

}  // namespace bugsift
