#pragma once

// Minimal dense row-major matrix/vector helpers for the hand-derived network.
// Summation order is fixed, so results are bit-reproducible.

#include <cmath>
#include <cstddef>
#include <vector>

#include "slicearb/domain.hpp"

namespace slicearb {

using Vec = std::vector<double>;

struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;  // row-major

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {}

  double& operator()(int r, int c) { return a[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return a[static_cast<std::size_t>(r) * cols + c]; }

  bool operator==(const Matrix&) const = default;
};

inline Vec matvec(const Matrix& w, const Vec& x) {
  Vec y(w.rows, 0.0);
  for (int r = 0; r < w.rows; ++r) {
    double acc = 0.0;
    const double* row = &w.a[static_cast<std::size_t>(r) * w.cols];
    for (int c = 0; c < w.cols; ++c) acc += row[c] * x[c];
    y[r] = acc;
  }
  return y;
}

inline Vec affine(const Matrix& w, const Vec& x, const Vec& b) {
  Vec y = matvec(w, x);
  for (int r = 0; r < w.rows; ++r) y[r] += b[r];
  return y;
}

// y = w^T g
inline Vec matvec_transposed(const Matrix& w, const Vec& g) {
  Vec y(w.cols, 0.0);
  for (int r = 0; r < w.rows; ++r) {
    const double* row = &w.a[static_cast<std::size_t>(r) * w.cols];
    for (int c = 0; c < w.cols; ++c) y[c] += row[c] * g[r];
  }
  return y;
}

// grad += u v^T
inline void add_outer(Matrix& grad, const Vec& u, const Vec& v) {
  for (int r = 0; r < grad.rows; ++r) {
    double* row = &grad.a[static_cast<std::size_t>(r) * grad.cols];
    for (int c = 0; c < grad.cols; ++c) row[c] += u[r] * v[c];
  }
}

inline void add_to(Vec& acc, const Vec& x) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += x[i];
}

inline double dot(const Vec& u, const Vec& v) {
  double acc = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) acc += u[i] * v[i];
  return acc;
}

inline Vec rectified(const Vec& x) {
  Vec y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  return y;
}

// dy masked by the rectifier's active set at pre-activation u.
inline Vec rectifier_backward(const Vec& dy, const Vec& u) {
  Vec dx(dy.size());
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = u[i] > 0.0 ? dy[i] : 0.0;
  return dx;
}

// Uniform in +-sqrt(6/(fan_in+fan_out)).
inline void glorot_init(Matrix& w, Rng& rng) {
  const double bound = std::sqrt(6.0 / (w.rows + w.cols));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (double& v : w.a) v = u(rng);
}

}  // namespace slicearb
